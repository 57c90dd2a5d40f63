"""Cell-level events: acceptable and good cells, good points, and their bounds.

Conventions used throughout:

* a cell's own points are the half-open box ``i*ell + [0, ell)^d`` (``ell^d``
  sites), matching ``cell_of``; every other region (extended, quasi-super and
  super boxes, landing boxes) is the closed box from ``tessellation.region``;
* two piecewise-constant paths *meet* at time ``s`` when they occupy the
  same site at ``s``;
* with ``lam == inf`` no particle is ever mark-free; with ``lam == 0`` every
  particle is.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Callable, Mapping

import numba as nb
import numpy as np
from scipy.stats import poisson

from . import _kernel as K
from .dynamics import ParticleTrace, RecoveryMarks, TraceSet, Trajectory
from .errors import EstimationError, ParameterError, PreconditionError
from .model import ParticleId, _site_counts, check_rho
from .rng import Purpose, RngStream, derive_seed, draw_uniform, make_stream, poisson_inverse, stream_id
from .stats import Estimate
from .tessellation import (EXTENDED_BOX, QUASI_SUPER_BOX, SUPER_BOX, Box, CellIndex,
                           TessellationParams, region)

E = math.e
NU_MIN_ACCEPTANCE = 1e-6


def _require_ell3(params: TessellationParams):
    if params.ell < 3:
        raise ParameterError("cell checks use the ell/3-enlarged box and need ell >= 3")


def directions(d: int) -> list[tuple]:
    """The 2d unit moves in kernel order: +e1, -e1, +e2, -e2, ..."""
    out = []
    for a in range(d):
        for sign in (1, -1):
            v = [0] * d
            v[a] = sign
            out.append(tuple(v))
    return out


def _as_cell(cell) -> CellIndex:
    return cell if isinstance(cell, CellIndex) else CellIndex(*cell)


def own_sites(cell: CellIndex, params: TessellationParams) -> np.ndarray:
    """The ``ell^d`` sites of the half-open cell box."""
    base = np.asarray(cell.i, dtype=np.int64) * params.ell
    axes = [range(b, b + params.ell) for b in base]
    return np.array(list(product(*axes)), dtype=np.int64).reshape(-1, params.d)


def _int_box(box: Box) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = box.integer_bounds()
    return np.asarray(lo, dtype=np.int64), np.asarray(hi, dtype=np.int64)


# -- path primitives ---------------------------------------------------------------

def _segment(path: Trajectory, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Breakpoints and sites of ``path`` restricted to ``[a, b]``; first row is the site at ``a``."""
    j = path.index_at(a)
    end = int(np.searchsorted(path.times, b, side="right"))
    times = np.concatenate(([a], path.times[j + 1:end]))
    return times, path.sites[j:end]


def stays_in(path: Trajectory, a: float, b: float, lo: np.ndarray, hi: np.ndarray) -> bool:
    """Every site visited on ``[a, b]`` lies in the closed integer box ``[lo, hi]``."""
    _, sites = _segment(path, a, b)
    return bool(np.all(sites >= lo) and np.all(sites <= hi))


def meets(p: Trajectory, q: Trajectory, a: float, b: float, include_end: bool = True) -> bool:
    """True iff ``p`` and ``q`` occupy the same site at some time in ``[a, b]`` (or ``[a, b)``)."""
    if b < a or (b == a and not include_end):
        return False
    tp, sp = _segment(p, a, b)
    tq, sq = _segment(q, a, b)
    grid = np.union1d(tp, tq)
    if not include_end:
        grid = grid[grid < b]
    ip = np.searchsorted(tp, grid, side="right") - 1
    iq = np.searchsorted(tq, grid, side="right") - 1
    return bool(np.any(np.all(sp[ip] == sq[iq], axis=1)))


def mark_free(marks: RecoveryMarks, a: float, b: float, lam: float) -> bool:
    if lam == 0:
        return True
    if math.isinf(lam):
        return False
    return not marks.any_in(a, b)


# -- context -----------------------------------------------------------------------

@dataclass
class CellCheckContext:
    """Trace plus geometry for evaluating cell events.

    The trace must contain every particle relevant to the checked cells (a
    universe trace from ``SimState.trace_universe`` always does) over the time
    span the checks read.
    """

    trace: TraceSet
    params: TessellationParams
    lam: float = 0.0
    spread_radius: int | None = None

    def __post_init__(self):
        if self.spread_radius is None:
            self.spread_radius = self.params.d + 2
        if self.spread_radius not in (1, self.params.d + 2):
            raise ParameterError(f"spread_radius must be 1 or d + 2, got {self.spread_radius}")
        self._starts = {}

    @property
    def T(self) -> float:
        return float(self.params.ell) ** (5.0 / 3.0)

    def require(self, box: Box, t0: float, t1: float):
        lo, hi = box.integer_bounds()
        if not self.trace.covers((lo, hi), t0, t1):
            raise PreconditionError(
                f"trace over {self.trace.box} x [{self.trace.t0}, {self.trace.t1}] does not cover "
                f"{lo}..{hi} x [{t0}, {t1}]")

    def positions(self, t: float) -> np.ndarray:
        """Positions of every traced particle at time ``t`` (cached)."""
        if t not in self._starts:
            self._starts[t] = np.array([tr.path.position_at(t) for tr in self.trace.traces],
                                       dtype=np.int64).reshape(-1, self.params.d)
        return self._starts[t]


def _carriers(cell: CellIndex, ctx: CellCheckContext) -> list[ParticleTrace]:
    """Particles in the quasi-super box at ``tau*beta``, mark-free and inside the super box up to ``(tau+1)*beta``."""
    p = ctx.params
    t0 = cell.tau * p.beta
    t1 = (cell.tau + 1) * p.beta
    qlo, qhi = _int_box(region(QUASI_SUPER_BOX, cell, p))
    slo, shi = _int_box(region(SUPER_BOX, cell, p))
    at = ctx.positions(t0)
    if len(at) == 0:
        return []
    inside = np.flatnonzero(np.all((at >= qlo) & (at <= qhi), axis=1))
    out = []
    for k in inside:
        tr = ctx.trace.traces[k]
        if mark_free(tr.marks, t0, t1, ctx.lam) and stays_in(tr.path, t0, t1, slo, shi):
            out.append(tr)
    return out


def _landing_boxes(tr: ParticleTrace, t: float, cell: CellIndex, radius: int, ell: int) -> set:
    """Offsets ``i'`` with ``||i'|| <= radius`` whose closed box holds ``tr`` at time ``t``."""
    x = tr.path.position_at(t)
    base = np.asarray(cell.i, dtype=np.int64) * ell
    rel = x - base
    # closed boxes overlap on faces, so a coordinate can sit in two boxes per axis
    per_axis = []
    for c in rel:
        opts = {c // ell}
        if c % ell == 0:
            opts.add(c // ell - 1)
        opts = sorted(o for o in opts if -radius <= o <= radius)
        if not opts:
            return set()
        per_axis.append(opts)
    return set(product(*per_axis))


# -- acceptable cells --------------------------------------------------------------

def is_acceptable(cell, ctx: CellCheckContext) -> bool:
    """Acceptable cell: mark-free local paths from every occupied site, each relayed to all nearby boxes.

    For every occupied site ``x`` of the cell at ``tau*beta`` some particle at
    ``x`` must (1) stay mark-free and inside the extended box up to
    ``tau*beta + T`` and (2) for every offset ``i'`` with
    ``||i'||_inf <= spread_radius`` meet, before ``tau*beta + T``, a carrier that
    sits in box ``i + i'`` at ``(tau+1)*beta``.  Carriers are mark-free, start in
    the quasi-super box and stay in the super box on ``[tau*beta, (tau+1)*beta]``.
    """
    cell = _as_cell(cell)
    p = ctx.params
    _require_ell3(p)
    t0 = cell.tau * p.beta
    t1 = (cell.tau + 1) * p.beta
    t_end = t0 + ctx.T
    ctx.require(region(SUPER_BOX, cell, p), t0, max(t1, t_end))
    sites = own_sites(cell, p)
    at = ctx.positions(t0)
    elo, ehi = _int_box(region(EXTENDED_BOX, cell, p))
    needed = set(product(range(-ctx.spread_radius, ctx.spread_radius + 1), repeat=p.d))
    carriers = None
    for x in sites:
        here = np.flatnonzero(np.all(at == x, axis=1)) if len(at) else []
        if len(here) == 0:
            continue
        if carriers is None:
            carriers = [(c, _landing_boxes(c, t1, cell, ctx.spread_radius, p.ell))
                        for c in _carriers(cell, ctx)]
        ok = False
        for k in here:
            gx = ctx.trace.traces[k]
            if not (mark_free(gx.marks, t0, t_end, ctx.lam) and stays_in(gx.path, t0, t_end, elo, ehi)):
                continue
            reached = set()
            for c, boxes in carriers:
                if boxes - reached and meets(c.path, gx.path, t0, t_end, include_end=False):
                    reached |= boxes
            if needed <= reached:
                ok = True
                break
        if not ok:
            return False
    return True


# -- distinguished paths and good cells -----------------------------------------------

@dataclass
class DistinguishedPath:
    """Displacement path ``gamma`` on ``[0, beta]`` with ``gamma_0 = 0``, plus its marks."""

    cell: CellIndex
    path: Trajectory
    marks: RecoveryMarks
    lam: float

    def __post_init__(self):
        if np.any(self.path.sites[0] != 0) or self.path.start != 0:
            raise ParameterError("a distinguished path starts at displacement 0 at time 0")

    @property
    def beta(self) -> float:
        return self.path.end

    @property
    def jump_times(self) -> np.ndarray:
        return self.path.jump_times

    def mark_free(self) -> bool:
        return mark_free(self.marks, 0.0, self.beta, self.lam)


def distinguished_stream(master_seed: int, cell) -> RngStream:
    cell = _as_cell(cell)
    return make_stream(master_seed, Purpose.DISTINGUISHED, (*cell.i, cell.tau))


def sample_distinguished_path(cell, lam: float, beta: float, stream: RngStream) -> DistinguishedPath:
    """Rate-1 walk displacement on ``[0, beta]`` and Poisson(``lam``) marks from the cell's stream."""
    cell = _as_cell(cell)
    if not beta > 0:
        raise ParameterError("beta must be positive")
    d = len(cell.i)
    times, sites = K.walk_path(np.uint64(stream.sid), np.zeros(d, np.int64), 0.0, float(beta), False, 0, 1)
    if 0 < lam < math.inf:
        marks = K.mark_times(np.uint64(stream.child(1).sid), float(lam), 0.0, float(beta))
    else:
        marks = np.empty(0)
    return DistinguishedPath(cell, Trajectory(times, sites, float(beta)), RecoveryMarks(marks), float(lam))


def window_displacement_ok(path: Trajectory, beta: float, T: float, bound: float) -> bool:
    """``sup_{s in [t, t+T]} ||gamma_s - gamma_t||_inf <= bound`` for every ``t`` in ``[0, beta - T]``.

    While ``gamma_t`` is constant on a piece ``[tau_j, tau_{j+1})`` the worst
    window starts just before ``tau_{j+1}``, so each piece needs one check.
    """
    if T > beta:
        return True
    times, sites = path.times, path.sites
    last_t = beta - T
    for j in range(len(times)):
        if times[j] > last_t:
            break
        nxt = times[j + 1] if j + 1 < len(times) else math.inf
        if nxt <= last_t:
            hi = np.searchsorted(times, nxt + T, side="left")   # s < tau_{j+1} + T
        else:
            hi = np.searchsorted(times, beta, side="right")     # s <= beta
        disp = sites[j:hi] - sites[j]
        if len(disp) and np.abs(disp).max() > bound:
            return False
    return True


def _own_path(cell: CellIndex, paths) -> DistinguishedPath:
    if isinstance(paths, DistinguishedPath):
        if paths.cell != cell:
            raise PreconditionError(f"distinguished path belongs to {paths.cell}, not {cell}")
        return paths
    if isinstance(paths, Mapping) and cell in paths:
        return paths[cell]
    if callable(paths):
        return paths(cell)
    raise PreconditionError(f"no distinguished path for {cell}")


def is_good_cell(cell, ctx: CellCheckContext, paths) -> bool:
    """Good cell: a quiet mark-free distinguished path, relays along it, acceptable successors.

    ``paths`` is the cell's ``DistinguishedPath``, a mapping from cells to
    paths, or a callable returning the path of a cell.  Acceptability of the
    successors is checked with spread radius ``d + 2`` regardless of
    ``ctx.spread_radius``.
    """
    cell = _as_cell(cell)
    p = ctx.params
    _require_ell3(p)
    gamma = _own_path(cell, paths)
    if gamma.beta != p.beta:
        raise PreconditionError("distinguished path length differs from beta")
    T = ctx.T
    t0 = cell.tau * p.beta
    t1 = (cell.tau + 1) * p.beta
    # condition 1
    if not gamma.mark_free():
        return False
    if not window_displacement_ok(gamma.path, p.beta, T, p.ell / 4 ** p.d):
        return False
    # condition 3 first: it is usually the cheaper failure
    nxt_ctx = ctx if ctx.spread_radius == p.d + 2 else CellCheckContext(ctx.trace, p, ctx.lam, p.d + 2)
    for off in product((-1, 0, 1), repeat=p.d):
        nb_cell = CellIndex(tuple(a + b for a, b in zip(cell.i, off)), cell.tau + 1)
        if not is_acceptable(nb_cell, nxt_ctx):
            return False
    # condition 2
    ctx.require(region(SUPER_BOX, cell, p), t0, t1)
    jumps = gamma.jump_times
    late = jumps[jumps >= p.beta - T]
    early = jumps[jumps < p.beta - T]
    base = np.asarray(cell.i, dtype=np.int64) * p.ell
    land_lo, land_hi = base - p.ell, base + 2 * p.ell
    sites = own_sites(cell, p)
    g_end = gamma.path.sites[-1]
    for r in late:
        shift = g_end - gamma.path.position_at(r)
        ends = sites + shift
        if not np.all((ends >= land_lo) & (ends <= land_hi)):
            return False
    if len(early) == 0:
        return True
    carriers = [c for c in _carriers(cell, ctx)
                if np.all((c.path.position_at(t1) >= land_lo) & (c.path.position_at(t1) <= land_hi))]
    if not carriers:
        return False
    for r in early:
        seg_t, seg_s = _segment(gamma.path, r, r + T)
        for x in sites:
            moved = Trajectory(seg_t + t0, seg_s - seg_s[0] + x, r + T + t0)
            if not any(meets(c.path, moved, t0 + r, t0 + r + T) for c in carriers):
                return False
    return True


def holds_E(cell, ctx: CellCheckContext, paths) -> bool:
    """Every cell ``(i + i', tau + tau')`` with ``||(i', tau')||_inf <= 1`` is acceptable and good."""
    cell = _as_cell(cell)
    if cell.tau < 1:
        raise PreconditionError("the composite event reads the previous time layer; need tau >= 1")
    p = ctx.params
    for off in product((-1, 0, 1), repeat=p.d + 1):
        c = CellIndex(tuple(a + b for a, b in zip(cell.i, off[:-1])), cell.tau + off[-1])
        if not is_acceptable(c, ctx) or not is_good_cell(c, ctx, paths):
            return False
    return True


# -- good points ---------------------------------------------------------------------

def _first_move(path: Trajectory, k: float) -> tuple[np.ndarray, int]:
    """Site at time ``k`` and index of the first move in ``[k, k+1)`` (``2d`` for none)."""
    j = path.index_at(k)
    x = path.sites[j]
    if j + 1 < len(path.times) and path.times[j + 1] < k + 1:
        step = path.sites[j + 1] - x
        a = int(np.flatnonzero(step)[0])
        return x, 2 * a + (0 if step[a] > 0 else 1)
    return x, 2 * path.sites.shape[1]


def transit_table(trace: TraceSet, lo, hi, k0: int, k1: int) -> np.ndarray:
    """Counts ``N_u^k(x)`` for ``x`` in the closed box ``[lo, hi]`` and integer ``k0 <= k < k1``.

    Shape ``(k1 - k0, n_sites, 2d + 1)``; sites in C order, the last column
    is the staying count.  The trace must cover ``[k0, k1]``.
    """
    lo = np.asarray(lo, dtype=np.int64)
    hi = np.asarray(hi, dtype=np.int64)
    d = len(lo)
    if trace.t0 > k0 or trace.t1 < k1:
        raise PreconditionError(f"trace [{trace.t0}, {trace.t1}] does not cover [{k0}, {k1}]")
    side = hi - lo + 1
    strides = np.ones(d, np.int64)
    for a in range(d - 2, -1, -1):
        strides[a] = strides[a + 1] * side[a + 1]
    out = np.zeros((k1 - k0, int(np.prod(side)), 2 * d + 1), np.int64)
    for tr in trace.traces:
        for k in range(k0, k1):
            x, u = _first_move(tr.path, k)
            if np.all(x >= lo) and np.all(x <= hi):
                out[k - k0, int(np.dot(x - lo, strides)), u] += 1
    return out


def transit_counts(window_trace: TraceSet, x, k: int) -> dict:
    """``{u: N_u^k(x)}`` over the 2d unit moves plus the zero vector for stayers."""
    x = np.atleast_1d(np.asarray(x, dtype=np.int64))
    d = len(x)
    row = transit_table(window_trace, x, x, int(k), int(k) + 1)[0, 0]
    keys = directions(d) + [(0,) * d]
    return {u: int(c) for u, c in zip(keys, row)}


def good_rows(counts: np.ndarray) -> np.ndarray:
    """Good-point indicator from rows of ``[N_+e1, N_-e1, ..., N_0]``."""
    return np.all(counts[..., :-1] >= 1, axis=-1) & (counts[..., -1] >= 2)


def is_good_point(point, window_trace: TraceSet) -> bool:
    """``N_u >= 1`` for every unit move ``u`` and ``N_0 >= 2`` at ``(x, k)``."""
    x, k = point
    x = np.atleast_1d(np.asarray(x, dtype=np.int64))
    row = transit_table(window_trace, x, x, int(k), int(k) + 1)[0, 0]
    return bool(good_rows(row))


def e_tilde_points(super_cell, params: TessellationParams) -> tuple[np.ndarray, np.ndarray, int, int]:
    """Half-open point set of a super cell: sites ``[lo, hi]`` and times ``k0 <= k < k1``.

    Per axis ``(2 eta + 1) ell`` sites and ``eta beta`` integer times, the
    count the union bound is stated for.
    """
    cell = _as_cell(super_cell)
    eta, ell = params.eta_overlap, params.ell
    base = np.asarray(cell.i, dtype=np.int64) * ell
    lo = base - eta * ell
    hi = base + (eta + 1) * ell - 1
    k0 = cell.tau * params.beta
    return lo, hi, k0, k0 + eta * params.beta


def holds_E_tilde(super_cell, window_trace: TraceSet, params: TessellationParams) -> bool:
    """Every point of the super cell is good."""
    lo, hi, k0, k1 = e_tilde_points(super_cell, params)
    return bool(np.all(good_rows(transit_table(window_trace, lo, hi, k0, k1))))


# -- compiled samplers -------------------------------------------------------------

@nb.njit(cache=True)
def _transit_into(seed, rho, lo, hi, k0, k1, R, out):
    """Add the transit counts of a fresh Poisson(rho) configuration to ``out``.

    Uses the model's streams: the particles are the cloud-0 particles of a
    run with master seed ``seed`` and no extra origin particle.  Particles
    starting more than ``R`` steps (L1) from ``[lo, hi]`` are skipped.
    """
    d = lo.shape[0]
    side = hi - lo + 1
    ext_side = side + 2 * R
    n_ext = 1
    for a in range(d):
        n_ext *= ext_side[a]
    key_site = np.zeros(d + 1, np.int64)
    key_p = np.zeros(d + 2, np.int64)
    cur = np.empty(d, np.int64)
    for e in range(n_ext):
        r = e
        dist = 0
        for a in range(d - 1, -1, -1):
            c = lo[a] - R + r % ext_side[a]
            r //= ext_side[a]
            key_site[1 + a] = c
            if c < lo[a]:
                dist += lo[a] - c
            elif c > hi[a]:
                dist += c - hi[a]
        if dist > R:
            continue
        cnt = poisson_inverse(rho, draw_uniform(stream_id(seed, 3, key_site), 0))
        for n in range(1, cnt + 1):
            key_p[:d + 1] = key_site
            key_p[d + 1] = n
            wsid = stream_id(seed, 1, key_p)
            cur[:] = key_site[1:]
            j = 0
            t = -math.log(draw_uniform(wsid, 0))
            for k in range(k1):
                while t <= k:
                    direction = int(draw_uniform(wsid, 2 * j + 1) * 2 * d)
                    if direction % 2 == 0:
                        cur[direction // 2] += 1
                    else:
                        cur[direction // 2] -= 1
                    j += 1
                    t += -math.log(draw_uniform(wsid, 2 * j))
                if k < k0:
                    continue
                flat = 0
                inside = True
                for a in range(d):
                    c = cur[a] - lo[a]
                    if c < 0 or c >= side[a]:
                        inside = False
                        break
                    flat = flat * side[a] + c
                if inside:
                    if t < k + 1:
                        out[k - k0, flat, int(draw_uniform(wsid, 2 * j + 1) * 2 * d)] += 1
                    else:
                        out[k - k0, flat, 2 * d] += 1


@nb.njit(cache=True)
def _transit_batch(master, first, count, rho, lo, hi, k0, k1, R):
    """Tables for replicas ``first .. first + count - 1``; replica ``r`` uses ``derive_seed(master, r)``."""
    d = lo.shape[0]
    npts = 1
    for a in range(d):
        npts *= hi[a] - lo[a] + 1
    out = np.zeros((count, k1 - k0, npts, 2 * d + 1), np.int64)
    label = np.empty(1, np.int64)
    for q in range(count):
        label[0] = first + q
        seed = stream_id(master, 0, label) >> np.uint64(1)
        _transit_into(seed, rho, lo, hi, k0, k1, R, out[q])
    return out


def reach_radius(t: float, tail: float = 1e-12) -> int:
    """Displacement radius exceeded by a rate-1 walk within time ``t`` with probability below ``tail``."""
    if t <= 0:
        return 0
    return int(poisson.isf(tail, t)) + 1


def _box_args(lo, hi):
    lo = np.atleast_1d(np.asarray(lo, dtype=np.int64))
    hi = np.atleast_1d(np.asarray(hi, dtype=np.int64))
    if lo.shape != hi.shape or np.any(lo > hi):
        raise ParameterError("empty or mismatched box")
    return lo, hi


def _seed64(seed: int) -> np.uint64:
    return np.uint64(int(seed) & ((1 << 64) - 1))


def sample_transit_tables(rho: float, lo, hi, k0: int, k1: int, seed: int) -> np.ndarray:
    """``transit_table`` for the run with master ``seed``, without simulating the whole run.

    Particles needing more than ``reach_radius(k1 - 1)`` steps to reach the
    box are ignored; each of them gets there in time with probability below 1e-12.
    """
    check_rho(rho)
    lo, hi = _box_args(lo, hi)
    out = np.zeros((k1 - k0, int(np.prod(hi - lo + 1)), 2 * len(lo) + 1), np.int64)
    _transit_into(_seed64(seed), float(rho), lo, hi, int(k0), int(k1), reach_radius(k1 - 1), out)
    return out


def sample_transit_batch(rho: float, lo, hi, k0: int, k1: int, samples: int, seed: int,
                         first: int = 0) -> np.ndarray:
    """Independent tables; replica ``r`` equals ``sample_transit_tables(..., derive_seed(seed, r))``."""
    check_rho(rho)
    lo, hi = _box_args(lo, hi)
    if samples < 1 or not 0 <= k0 < k1:
        raise ParameterError("need samples >= 1 and 0 <= k0 < k1")
    return _transit_batch(_seed64(seed), int(first), int(samples), float(rho), lo, hi, int(k0), int(k1),
                          reach_radius(k1 - 1))


def sample_point_counts(rho: float, d: int, samples: int, seed: int, k: int = 1) -> np.ndarray:
    """Transit counts at ``(0, k)`` for ``samples`` independent runs, shape ``(samples, 2d + 1)``."""
    zero = np.zeros(d, np.int64)
    return sample_transit_batch(rho, zero, zero, k, k + 1, samples, seed)[:, 0, 0]


def sample_E_tilde(rho: float, params: TessellationParams, samples: int, seed: int, super_cell=None):
    """Indicators of the super-cell event over ``samples`` independent runs."""
    if super_cell is None:
        super_cell = CellIndex((0,) * params.d, 0)
    lo, hi, k0, k1 = e_tilde_points(super_cell, params)
    tables = sample_transit_batch(rho, lo, hi, k0, k1, samples, seed)
    return np.all(good_rows(tables), axis=(1, 2))


# -- closed forms --------------------------------------------------------------------

@dataclass(frozen=True)
class BoundInputs:
    """Inputs of the closed-form bounds; the constants default to 1.0."""

    rho: float
    lam: float = 0.0
    ell: float = 8
    beta: float = 1
    eta_overlap: int = 1
    d: int = 1
    c1: float = 1.0
    c2: float = 1.0
    c_acc: float = 1.0
    c_good: float = 1.0
    alpha0: float = 1.0

    def __post_init__(self):
        if not self.rho > 0 or self.lam < 0 or math.isnan(self.lam):
            raise ParameterError("rho must be positive and lam non-negative")
        for name in ("ell", "beta", "eta_overlap", "d", "c1", "c2", "c_acc", "c_good", "alpha0"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")


def good_point_probability(rho: float, d: int) -> float:
    """``(1 - e^{-rho/e} - (rho/e) e^{-rho/e}) (1 - e^{-(1 - 1/e) rho / (2d)})^{2d}``."""
    if not rho > 0 or d < 1:
        raise ParameterError("need rho > 0 and d >= 1")
    m0 = rho / E
    stay = -math.expm1(-m0) - m0 * math.exp(-m0)
    move = -math.expm1(-(1 - 1 / E) * rho / (2 * d))
    return stay * move ** (2 * d)


def bound_acceptable(inputs: BoundInputs) -> float:
    return -math.expm1(-inputs.c_acc * inputs.rho * math.exp(-inputs.lam * inputs.beta) * inputs.ell ** (1 / 3))


def bound_good(inputs: BoundInputs) -> float:
    """May be negative for small ``ell``; returned as is."""
    i = inputs
    m = min(1.0, i.rho, i.lam)
    damp = math.exp(-i.lam * i.beta) if m > 0 else 0.0
    first = 5 * i.ell ** (2 * i.d) * (i.beta + i.d + 1) * math.exp(-i.c_good * m * damp * i.ell ** (1 / 6))
    second = 2 * math.exp(-min(i.lam, 1.0) * i.beta)
    return 1 - first - second


def bound_E_tilde_complement(inputs: BoundInputs) -> float:
    """Union bound over the ``((2 eta + 1) ell)^d eta beta`` points of a super cell."""
    i = inputs
    points = ((2 * i.eta_overlap + 1) * i.ell) ** i.d * i.eta_overlap * i.beta
    return points * (1 - good_point_probability(i.rho, i.d))


def omega_lower_bound(eta_overlap: float, beta: float, ell: float, epsilon: float,
                      c1: float = 1.0, c2: float = 1.0) -> float:
    """``sqrt((eta beta / (c2 ell^2)) log(8 c1 / epsilon))``; 0 when the logarithm is not positive."""
    if not 0 < epsilon < 1:
        raise ParameterError(f"epsilon must lie in (0, 1), got {epsilon}")
    if min(eta_overlap, beta, ell, c1, c2) <= 0:
        raise ParameterError("eta_overlap, beta, ell, c1 and c2 must be positive")
    lg = math.log(8 * c1 / epsilon)
    if lg <= 0:
        return 0.0
    return math.sqrt(eta_overlap * beta / (c2 * ell * ell) * lg)


def hypothesis_values(epsilon: float, rho: float, ell: float, nu_hat: float, d: int = 1) -> tuple[float, float]:
    if not 0 <= nu_hat <= 1:
        raise ParameterError(f"nu_hat must lie in [0, 1], got {nu_hat}")
    first = epsilon * rho * ell ** d
    second = math.inf if nu_hat == 1 else -math.log1p(-nu_hat)
    return first, second


def check_hypotheses(epsilon: float, rho: float, ell: float, nu_hat: float, alpha0: float, d: int = 1) -> bool:
    """``min{eps rho ell^d, log(1 / (1 - nu_hat))} >= alpha0``."""
    return min(hypothesis_values(epsilon, rho, ell, nu_hat, d)) >= alpha0


# -- conditioned Monte Carlo ----------------------------------------------------------

@nb.njit(cache=True)
def _accepted_attempts(seed, sites, counts, s, dlo, dhi, max_attempts):
    """First attempt index at which each particle's displacement stays in ``[dlo, dhi]`` on ``[0, s]``.

    Attempt 0 is the particle's own walk stream; attempt ``a > 0`` appends
    ``a`` to its key.  Returns (attempts per particle, total tried); an entry
    of -1 means the cap was hit.
    """
    d = sites.shape[1]
    n = counts.sum()
    out = np.empty(n, np.int64)
    key0 = np.empty(d + 2, np.int64)
    key1 = np.empty(d + 3, np.int64)
    disp = np.empty(d, np.int64)
    total = 0
    q = 0
    for sidx in range(sites.shape[0]):
        for idx in range(1, counts[sidx] + 1):
            key0[0] = 0
            key0[1:d + 1] = sites[sidx]
            key0[d + 1] = idx
            key1[:d + 2] = key0
            found = -1
            for a in range(max_attempts):
                total += 1
                if a == 0:
                    wsid = stream_id(seed, 1, key0)
                else:
                    key1[d + 2] = a
                    wsid = stream_id(seed, 1, key1)
                disp[:] = 0
                ok = True
                j = 0
                t = -math.log(draw_uniform(wsid, 0))
                while t <= s:
                    direction = int(draw_uniform(wsid, 2 * j + 1) * 2 * d)
                    ax = direction // 2
                    disp[ax] += 1 if direction % 2 == 0 else -1
                    if disp[ax] < dlo[ax] or disp[ax] > dhi[ax]:
                        ok = False
                        break
                    j += 1
                    t += -math.log(draw_uniform(wsid, 2 * j))
                if ok:
                    found = a
                    break
            out[q] = found
            q += 1
            if found < 0:
                return out[:q], total
    return out, total


def _attempt_sid(seed: int, cloud: int, origin, index: int, attempt: int) -> np.uint64:
    key = [cloud, *origin, index] + ([attempt] if attempt > 0 else [])
    return np.uint64(stream_id(_seed64(seed), int(Purpose.WALK), np.asarray(key, dtype=np.int64)))


def conditioned_trace(rho: float, X: Box, X_prime: Box, s: float, seed: int, lam: float = 0.0,
                      max_attempts: int = 10 ** 7) -> tuple[TraceSet, dict]:
    """Poisson(``rho``) particles on ``X`` whose displacement stays in ``X_prime`` on ``[0, s]``.

    Each particle is resampled independently (fresh stream per attempt)
    until accepted.  Returns the trace and per-particle acceptance diagnostics.
    """
    check_rho(rho)
    if s < 0:
        raise ParameterError("s must be non-negative")
    useed = _seed64(seed)
    sites = X.sites()
    # same initial counts as a run's cloud 0
    counts = _site_counts(useed, 0, sites.reshape(-1, X.d), float(rho)) if len(sites) else np.zeros(0, np.int64)
    dlo, dhi = _int_box(X_prime)
    if np.any(dlo > 0) or np.any(dhi < 0):
        raise EstimationError("the displacement region excludes 0; acceptance probability is 0")
    attempts, total = _accepted_attempts(useed, sites.reshape(-1, X.d), counts, float(s), dlo, dhi, int(max_attempts))
    accepted = int(np.count_nonzero(attempts >= 0))
    diag = {"particles": int(counts.sum()), "attempts": int(total), "accepted": accepted}
    if np.any(attempts < 0) or (total >= 1_000_000 and accepted / total < NU_MIN_ACCEPTANCE):
        raise EstimationError(f"rejection acceptance below {NU_MIN_ACCEPTANCE:g}: {diag}, s={s}, X'={X_prime}")
    traces = []
    q = 0
    for sidx, site in enumerate(sites):
        origin = tuple(int(v) for v in site)
        for idx in range(1, int(counts[sidx]) + 1):
            a = int(attempts[q])
            q += 1
            wsid = _attempt_sid(int(seed), 0, origin, idx, a)
            times, path = K.walk_path(wsid, np.asarray(origin, dtype=np.int64), 0.0, float(s), False, 0, 1)
            if 0 < lam < math.inf:
                msid = np.uint64(stream_id(useed, int(Purpose.RECOVERY), np.asarray([0, *origin, idx], dtype=np.int64)))
                marks = K.mark_times(msid, float(lam), 0.0, float(s))
            else:
                marks = np.empty(0)
            traces.append(ParticleTrace(ParticleId(0, origin, idx), Trajectory(times, path, float(s)),
                                        RecoveryMarks(marks)))
    box = X.integer_bounds()
    return TraceSet(box, 0.0, float(s), traces), diag


def estimate_nu_E(event_checker: Callable[[TraceSet], bool], rho: float, X: Box, X_prime: Box, s: float,
                  replicas: int, seed: int, lam: float = 0.0) -> Estimate:
    """Monte Carlo estimate of P(E) given density ``rho`` on ``X`` and displacements in ``X_prime`` up to ``s``."""
    if replicas < 1:
        raise ParameterError("replicas must be at least 1")
    hits = 0
    for r in range(replicas):
        trace, _ = conditioned_trace(rho, X, X_prime, s, derive_seed(seed, r), lam)
        hits += bool(event_checker(trace))
    return Estimate.from_counts(hits, replicas)
