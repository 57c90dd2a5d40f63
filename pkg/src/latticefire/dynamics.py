"""Continuous-time infection dynamics on top of independent rate-1 walks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from . import _kernel as K
from .errors import KernelError, ParameterError, PreconditionError, RangeError
from .model import (Configuration, LatticeDomain, ParticleId, check_rho,
                    sample_layer_counts)
from .rng import Purpose, RngStream, stream_id

CONTACT = "contact"
JUMP = "jump"
VARIANTS = {CONTACT: K.VARIANT_CONTACT, JUMP: K.VARIANT_JUMP,
            "instantaneous_contact": K.VARIANT_CONTACT, "jump_time": K.VARIANT_JUMP}
MAX_HORIZON = 1e6

_VIOLATIONS = {
    K.V_PURITY: "mixed site under instantaneous contact",
    K.V_LONE_INFECTED: "lone infected particle under instantaneous recovery",
    K.V_COUNT: "infected count outside [0, count]",
    K.V_CONSERVATION: "particle count not conserved",
    K.V_DOMINANCE: "occupation dominance violated",
    K.V_CONTAINMENT: "infected-set containment violated",
}


class InvariantViolation(KernelError):
    def __init__(self, code: int, time: float):
        self.code = code
        self.time = time
        super().__init__(f"{_VIOLATIONS.get(code, code)} at t={time}")


def regime_of(lam: float) -> int:
    if lam == 0:
        return K.REGIME_NONE
    if math.isinf(lam):
        return K.REGIME_INSTANT
    return K.REGIME_RATE


def parse_lambda(value) -> float:
    if isinstance(value, str):
        v = value.strip().lower()
        value = math.inf if v in ("inf", "infinity", "∞") else float(v)
    lam = float(value)
    if math.isnan(lam) or lam < 0:
        raise ParameterError(f"recovery rate must be 0, positive or inf, got {value}")
    return lam


@dataclass(frozen=True)
class TrialParams:
    """Parameters of one infection run.

    ``lam`` is the recovery rate: 0 disables recovery, ``math.inf`` selects
    instantaneous recovery.  ``layers`` splits ``rho`` into independently
    seeded clouds (used by the density couplings); by default there is one.
    """

    rho: float
    lam: float = 0.0
    d: int = 1
    L: int = 11
    horizon: float = 100.0
    variant: str = CONTACT
    boundary: str = "halo"
    halo_margin: int | None = None
    layers: tuple | None = None

    def __post_init__(self):
        check_rho(self.rho)
        object.__setattr__(self, "lam", parse_lambda(self.lam))
        if self.variant not in VARIANTS:
            raise ParameterError(f"unknown variant {self.variant!r}")
        if not (0 <= self.horizon <= MAX_HORIZON):
            raise ParameterError(f"horizon must lie in [0, {MAX_HORIZON:g}]")
        if self.layers is not None:
            if any(x < 0 for x in self.layers) or not math.isclose(sum(self.layers), self.rho, rel_tol=1e-9, abs_tol=1e-12):
                raise ParameterError("layers must be non-negative and sum to rho")

    @property
    def domain(self) -> LatticeDomain:
        if self.halo_margin is None:
            return LatticeDomain.for_horizon(self.d, self.L, self.horizon, self.boundary)
        return LatticeDomain(self.d, self.L, self.boundary, self.halo_margin)

    @property
    def cloud_densities(self) -> tuple:
        return tuple(self.layers) if self.layers is not None else (self.rho,)


@dataclass
class RecoveryMarks:
    times: np.ndarray

    def __len__(self):
        return len(self.times)

    def any_in(self, t0: float, t1: float) -> bool:
        i = np.searchsorted(self.times, t0, side="left")
        return i < len(self.times) and self.times[i] <= t1


@dataclass
class Trajectory:
    """Piecewise-constant path: ``sites[j]`` is occupied on ``[times[j], times[j+1])``.

    The path is known on ``[times[0], end]``.
    """

    times: np.ndarray
    sites: np.ndarray
    end: float = math.inf

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.sites = np.asarray(self.sites, dtype=np.int64).reshape(len(self.times), -1)
        if len(self.times) == 0:
            raise ParameterError("a trajectory needs a starting point")
        if np.any(np.diff(self.times) < 0) or self.end < self.times[-1]:
            raise ParameterError("trajectory times must be non-decreasing and end after the last jump")

    def covers(self, t0: float, t1: float) -> bool:
        return self.times[0] <= t0 <= t1 <= self.end

    @property
    def start(self) -> float:
        return float(self.times[0])

    @property
    def jump_times(self) -> np.ndarray:
        return self.times[1:]

    def index_at(self, t: float) -> int:
        if t < self.times[0] or t > self.end:
            raise RangeError(f"t={t} outside the trajectory window [{self.times[0]}, {self.end}]")
        return int(np.searchsorted(self.times, t, side="right")) - 1

    def position_at(self, t: float) -> np.ndarray:
        return self.sites[self.index_at(t)]

    def shifted(self, offset, t_offset: float = 0.0) -> "Trajectory":
        return Trajectory(self.times + t_offset, self.sites + np.asarray(offset, dtype=np.int64),
                          self.end + t_offset)


@dataclass
class ParticleTrace:
    pid: ParticleId
    path: Trajectory
    marks: RecoveryMarks


@dataclass
class TraceSet:
    """Trajectories over ``[t0, t1]`` of the particles in ``box`` at ``t0``.

    ``box`` is a closed integer box ``(lo, hi)``; ``None`` marks a universe
    trace that contains every particle in existence, which can then serve
    any later sub-window through ``restrict``.
    """

    box: tuple | None
    t0: float
    t1: float
    traces: list = field(default_factory=list)

    def __len__(self):
        return len(self.traces)

    def __iter__(self):
        return iter(self.traces)

    @property
    def universe(self) -> bool:
        return self.box is None

    def covers(self, box, t0: float, t1: float) -> bool:
        if t1 > self.t1 + 1e-12:
            return False
        if self.universe:
            return t0 >= self.t0
        lo, hi = self.box
        blo, bhi = box
        return t0 == self.t0 and all(a <= b for a, b in zip(lo, blo)) and all(a >= b for a, b in zip(hi, bhi))

    def restrict(self, box, t0: float, t1: float) -> "TraceSet":
        """Particles inside the closed box ``box`` at ``t0``, cut to ``[t0, t1]``."""
        box = (tuple(int(v) for v in box[0]), tuple(int(v) for v in box[1]))
        if not self.covers(box, t0, t1):
            raise PreconditionError(f"trace [{self.t0}, {self.t1}] over {self.box} does not cover {box} x [{t0}, {t1}]")
        lo = np.asarray(box[0])
        hi = np.asarray(box[1])
        out = []
        for tr in self.traces:
            path = tr.path
            j = path.index_at(t0)
            x = path.sites[j]
            if np.all(x >= lo) and np.all(x <= hi):
                end = int(np.searchsorted(path.times, t1, side="right"))
                times = np.concatenate(([t0], path.times[j + 1:end]))
                sites = path.sites[j:end]
                m = tr.marks.times
                marks = m[(m >= t0) & (m <= t1)]
                out.append(ParticleTrace(tr.pid, Trajectory(times, sites, t1), RecoveryMarks(marks)))
        return TraceSet(box, t0, t1, out)


@dataclass(frozen=True)
class SpaceTimeBox:
    lo: tuple
    hi: tuple
    t0: float
    t1: float


@dataclass
class TrialOutcome:
    extinct_at: float | None
    survived_to_horizon: bool
    origin_infected_intervals: list
    boundary_contaminated: bool
    n_events: int = 0

    def __post_init__(self):
        if (self.extinct_at is None) != self.survived_to_horizon:
            raise KernelError("extinct_at must be present iff the run died out")


@nb.njit(cache=True)
def _build_particles(sites, counts, origin_row, extra):
    """Particles ordered by (cloud, site, index); ``extra`` adds one at the origin in cloud 0."""
    n_cloud, m = counts.shape
    d = sites.shape[1]
    n = counts.sum() + (1 if extra else 0)
    cloud = np.empty(n, np.int64)
    origin = np.empty((n, d), np.int64)
    index = np.empty(n, np.int64)
    k = 0
    for c in range(n_cloud):
        for s in range(m):
            top = counts[c, s]
            if extra and c == 0 and s == origin_row:
                top += 1
            for j in range(top):
                cloud[k] = c
                origin[k] = sites[s]
                index[k] = j + 1
                k += 1
    return cloud, origin, index


@nb.njit(cache=True)
def _stream_ids(seed, purpose, cloud, origin, index):
    n, d = origin.shape
    out = np.empty(n, np.uint64)
    key = np.empty(d + 2, np.int64)
    for p in range(n):
        key[0] = cloud[p]
        key[1:d + 1] = origin[p]
        key[d + 1] = index[p]
        out[p] = stream_id(seed, purpose, key)
    return out


@nb.njit(cache=True)
def _first_draws(sid, pf, lam):
    for p in range(sid.shape[0]):
        pf[p, K.F_TJ] = -math.log(K.draw_uniform(sid[p, K.S_WALK], 0))
        if lam > 0 and lam < np.inf:
            pf[p, K.F_TM] = -math.log(K.draw_uniform(sid[p, K.S_MARK], 0)) / lam
        else:
            pf[p, K.F_TM] = np.inf


@nb.njit(cache=True)
def _fill_grid(ip, pos, pi, grid, geo, region_lo, region_hi):
    d = pos.shape[1]
    grid[:, K.G_COUNT] = 0
    grid[:, K.G_ICOUNT] = 0
    grid[:, K.G_HEAD] = -1
    for s in range(grid.shape[0]):
        edge = False
        for a in range(d):
            coord = geo[K.GEO_LO, a] + (s // geo[K.GEO_STRIDE, a]) % geo[K.GEO_SHAPE, a]
            if coord <= region_lo or coord >= region_hi:
                edge = True
        grid[s, K.G_SHELL] = 1 if edge and ip[K.IP_PERIODIC] == 0 else 0
    for p in range(pos.shape[0]):
        s = K.grid_index(geo, pos[p])
        if s < 0:
            return p
        pi[p, K.P_SITE] = s
        K.link(grid, pi, p, s)
    return -1


@nb.njit(cache=True)
def _instant_closure(ip, si, pi, grid, qh, ql, qk):
    changed = True
    while changed:
        changed = False
        for s in range(grid.shape[0]):
            if grid[s, K.G_COUNT] == 1 and grid[s, K.G_ICOUNT] == 1:
                K.heal(ip, si, pi, grid, qh, ql, qk, grid[s, K.G_HEAD])
                changed = True


class SimState:
    """Mutable state of one run; owned by a single thread.

    Particles are stored in ``(cloud, origin, index)`` order.  The extra
    infected particle is ``ParticleId(0, origin, eta_0(0) + 1)``.
    """

    def __init__(self, params: TrialParams, seed: int, *, check_mode: int = 0,
                 stop_on_extinction: bool = False, log_events: bool = False,
                 add_origin_particle: bool = True, _particles=None):
        self.params = params
        self.seed = int(seed)
        self.domain = params.domain
        self.recording_from: float | None = None
        self.event_log: list = []
        d = self.domain.d
        useed = np.uint64(self.seed & ((1 << 64) - 1))
        if _particles is None:
            sites = self.domain.region_sites()
            counts = np.stack([sample_layer_counts(rho_c, self.domain, self.seed, c)
                               for c, rho_c in enumerate(params.cloud_densities)])
            origin_row = int(np.flatnonzero(np.all(sites == 0, axis=1))[0])
            cloud, origin, index = _build_particles(sites, counts, origin_row, add_origin_particle)
            infected = np.all(origin == 0, axis=1) if add_origin_particle else np.zeros(len(cloud), bool)
        else:
            cloud, origin, index, infected = _particles
        self.cloud = cloud
        self.origin = origin
        self.index = index
        n = len(cloud)
        lam = params.lam
        regime = regime_of(lam)

        sid = np.empty((n, 2), np.uint64)
        sid[:, K.S_WALK] = _stream_ids(useed, int(Purpose.WALK), cloud, origin, index)
        sid[:, K.S_MARK] = _stream_ids(useed, int(Purpose.RECOVERY), cloud, origin, index)
        pf = np.empty((n, 2))
        _first_draws(sid, pf, lam)
        pi = np.zeros((n, 6), np.int64)
        pi[:, K.P_INF] = np.asarray(infected, dtype=bool)
        inf = pi[:, K.P_INF] == 1

        ip = np.zeros(10, np.int64)
        ip[K.IP_D] = d
        ip[K.IP_VARIANT] = VARIANTS[params.variant]
        ip[K.IP_REGIME] = regime
        ip[K.IP_PERIODIC] = 1 if self.domain.periodic else 0
        ip[K.IP_CHECK] = check_mode
        ip[K.IP_STOP_EXTINCT] = 1 if stop_on_extinction else 0
        ip[K.IP_LOG] = 1 if log_events else 0
        ip[K.IP_N] = n
        # about one event per bucket, ring spans 8 time units
        ip[K.IP_QSHIFT] = max(int(math.ceil(math.log2(max(n, 1)))), 0)
        fp = np.array([lam if regime == K.REGIME_RATE else 0.0])
        sc = np.array([0.0, np.nan, np.nan])
        si = np.zeros(10, np.int64)
        keys = np.full(2 * n, np.inf)
        keys[0::2] = pf[:, K.F_TJ]
        if regime == K.REGIME_RATE:
            keys[1::2] = np.where(inf, pf[:, K.F_TM], np.inf)
        nlog = 4096 if log_events else 1
        self.core = K.Core(
            ip=ip, fp=fp, sc=sc, si=si, pos=np.array(origin, dtype=np.int64).reshape(n, d),
            pi=pi, pf=pf, sid=sid, grid=np.zeros((0, 4), np.int64),
            qh=np.empty(1 << (int(ip[K.IP_QSHIFT]) + 3), np.int64), ql=np.empty((2 * n, 2), np.int64), qk=np.empty(2 * n),
            geo=np.zeros((3, d), np.int64), ivl=np.full((64, 2), np.nan),
            log_t=np.zeros(nlog), log_i=np.zeros((nlog, 5), np.int64),
        )
        self._pad = 0 if self.domain.periodic else int(math.ceil(5 * math.sqrt(max(params.horizon, 1.0)))) + 8
        self._build_grid()
        c = self.core
        K.qbuild(ip, si, c.qh, c.ql, c.qk, keys)
        si[K.SI_NINF] = int(inf.sum())
        if regime == K.REGIME_INSTANT:
            _instant_closure(ip, si, c.pi, c.grid, c.qh, c.ql, c.qk)
        if c.grid[ip[K.IP_ORIGIN], K.G_ICOUNT] > 0:
            si[K.SI_ORIGIN_ON] = 1
            c.ivl[0, 0] = 0.0
        if si[K.SI_NINF] == 0:
            sc[K.SC_EXTINCT_AT] = 0.0
        if np.any((c.grid[:, K.G_SHELL] == 1) & (c.grid[:, K.G_ICOUNT] > 0)):
            si[K.SI_CONTAM] = 1
        if check_mode:
            v = K.check_all(ip, c.grid)
            if v:
                raise InvariantViolation(v, 0.0)

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_particles(cls, params: TrialParams, seed: int, sites, infected=None, **kw) -> "SimState":
        """State with explicitly placed particles (cloud 0, numbered per site)."""
        sites = np.asarray(sites, dtype=np.int64).reshape(-1, params.d)
        order = np.lexsort(sites.T[::-1])
        sites = sites[order]
        infected = np.zeros(len(sites), bool) if infected is None else np.asarray(infected, bool)[order]
        index = np.ones(len(sites), np.int64)
        for j in range(1, len(sites)):
            if np.array_equal(sites[j], sites[j - 1]):
                index[j] = index[j - 1] + 1
        cloud = np.zeros(len(sites), np.int64)
        state = cls(params, seed, _particles=(cloud, sites, index, infected), **kw)
        state._input_order = order
        return state

    def _build_grid(self):
        dom = self.domain
        d = dom.d
        c = self.core
        pos = c.pos
        if dom.periodic:
            glo = np.full(d, dom.inner_lo, np.int64)
            gshape = np.full(d, dom.L, np.int64)
        else:
            lo = np.full(d, dom.region_lo, np.int64)
            hi = np.full(d, dom.region_hi, np.int64)
            if len(pos):
                lo = np.minimum(lo, pos.min(axis=0))
                hi = np.maximum(hi, pos.max(axis=0))
            glo = lo - self._pad
            gshape = hi - lo + 1 + 2 * self._pad
        geo = np.empty((3, d), np.int64)
        geo[K.GEO_LO] = glo
        geo[K.GEO_SHAPE] = gshape
        geo[K.GEO_STRIDE, d - 1] = 1
        for a in range(d - 2, -1, -1):
            geo[K.GEO_STRIDE, a] = geo[K.GEO_STRIDE, a + 1] * gshape[a + 1]
        grid = np.zeros((int(np.prod(gshape)), 4), np.int64)
        bad = _fill_grid(c.ip, pos, c.pi, grid, geo, dom.region_lo, dom.region_hi)
        if bad >= 0:
            raise KernelError(f"particle {bad} outside the grid after rebuild")
        c.ip[K.IP_ORIGIN] = K.grid_index(geo, np.zeros(d, np.int64))
        self.core = c._replace(grid=grid, geo=geo)

    def _regrid(self):
        self._pad = max(2 * self._pad, 16)
        self._build_grid()

    def _grow_intervals(self):
        old = self.core.ivl
        new = np.full((2 * old.shape[0], 2), np.nan)
        new[:old.shape[0]] = old
        self.core = self.core._replace(ivl=new)

    def _flush_log(self):
        n = int(self.core.si[K.SI_NLOG])
        c = self.core
        for j in range(n):
            self.event_log.append((float(c.log_t[j]), *(int(v) for v in c.log_i[j])))
        c.si[K.SI_NLOG] = 0

    def handle_status(self, status: int) -> bool:
        """Fix a resumable status; return False when evolution must stop."""
        if status == K.OUT_OF_GRID:
            self._regrid()
        elif status == K.IVL_FULL:
            self._grow_intervals()
        elif status == K.LOG_FULL:
            self._flush_log()
        elif status == K.VIOLATION:
            raise InvariantViolation(int(self.core.si[K.SI_VIOLATION]), float(self.core.sc[K.SC_VIOLATION_T]))
        elif status == K.CORRUPT:
            raise KernelError(f"event queue corrupted at t={self.time}")
        elif status == K.EXTINCT:
            return False
        return True

    # -- views ---------------------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.cloud)

    @property
    def time(self) -> float:
        return float(self.core.sc[K.SC_TIME])

    @property
    def n_infected(self) -> int:
        return int(self.core.si[K.SI_NINF])

    @property
    def n_events(self) -> int:
        return int(self.core.si[K.SI_NEVENTS])

    @property
    def contaminated(self) -> bool:
        return bool(self.core.si[K.SI_CONTAM])

    @property
    def extinct_at(self) -> float | None:
        v = float(self.core.sc[K.SC_EXTINCT_AT])
        return None if math.isnan(v) else v

    @property
    def positions(self) -> np.ndarray:
        return self.core.pos

    @property
    def infected(self) -> np.ndarray:
        return self.core.pi[:, K.P_INF] == 1

    @property
    def wsid(self) -> np.ndarray:
        return self.core.sid[:, K.S_WALK]

    @property
    def msid(self) -> np.ndarray:
        return self.core.sid[:, K.S_MARK]

    def particle_id(self, p: int) -> ParticleId:
        return ParticleId(int(self.cloud[p]), tuple(int(v) for v in self.origin[p]), int(self.index[p]))

    def infected_ids(self) -> set:
        return {self.particle_id(p) for p in np.flatnonzero(self.infected)}

    def origin_intervals(self, close_at: float | None = None) -> list:
        c = self.core
        k = int(c.si[K.SI_NIVL])
        out = [(float(c.ivl[j, 0]), float(c.ivl[j, 1])) for j in range(k)]
        if c.si[K.SI_ORIGIN_ON]:
            out.append((float(c.ivl[k, 0]), self.time if close_at is None else close_at))
        return out

    def configuration(self) -> Configuration:
        counts: dict = {}
        infected: dict = {}
        for x, inf in zip(map(tuple, self.core.pos.tolist()), self.infected):
            counts[x] = counts.get(x, 0) + 1
            if inf:
                infected[x] = infected.get(x, 0) + 1
        return Configuration(counts, infected, self.time, self.domain)

    def site_state(self, x) -> tuple[int, int]:
        g = self.core.grid
        s = K.grid_index(self.core.geo, np.asarray(x, dtype=np.int64))
        if s < 0:
            return 0, 0
        return int(g[s, K.G_COUNT]), int(g[s, K.G_ICOUNT])

    def enable_recording(self, t_from: float | None = None):
        self.recording_from = self.time if t_from is None else t_from

    def trace_universe(self, t1: float, t0: float = 0.0) -> TraceSet:
        """Trajectories of every particle over ``[t0, t1]``, replayed from their streams."""
        return self._traces(np.arange(self.n), t0, t1, None)

    def _traces(self, which, t0, t1, box) -> TraceSet:
        dom = self.domain
        lam = self.params.lam
        out = []
        for p in which:
            times, sites = K.walk_path(self.wsid[p], self.origin[p], float(t0), float(t1),
                                       dom.periodic, dom.inner_lo, dom.L)
            if 0 < lam < math.inf:
                marks = K.mark_times(self.msid[p], lam, float(t0), float(t1))
            else:
                marks = np.empty(0)
            out.append(ParticleTrace(self.particle_id(p), Trajectory(times, sites, float(t1)), RecoveryMarks(marks)))
        return TraceSet(box, float(t0), float(t1), out)


def _after_external(state: SimState, t: float):
    c = state.core
    if c.si[K.SI_NIVL] + 1 >= c.ivl.shape[0]:
        state._grow_intervals()
        c = state.core
    K.update_origin(c.ip, c.si, c.grid, c.ivl, t)
    K.note_extinction(c.ip, c.sc, c.si, t)


def _run(state: SimState, t_end: float, max_events: int = -1) -> int:
    while True:
        st = K.advance(*state.core, float(t_end), max_events)
        if st in (K.OK, K.MAX_EVENTS):
            return st
        if not state.handle_status(st):
            return st


def evolve(state: SimState, t_end: float) -> SimState:
    """Process every event in ``(state.time, t_end]`` in time order."""
    if t_end < state.time:
        raise RangeError(f"t_end={t_end} precedes current time {state.time}")
    if t_end > state.params.horizon:
        raise RangeError(f"t_end={t_end} exceeds horizon {state.params.horizon}")
    _run(state, t_end)
    if state.core.ip[K.IP_LOG]:
        state._flush_log()
    return state


def step_events(state: SimState, n_events: int) -> SimState:
    """Process at most ``n_events`` further events (never past the horizon)."""
    _run(state, state.params.horizon, n_events)
    return state


def move_particle(state: SimState, p: int, site, time: float | None = None) -> SimState:
    """Force particle ``p`` onto ``site`` and apply the infection rules there."""
    t = state.time if time is None else float(time)
    coords = np.asarray(site, dtype=np.int64)
    while True:
        c = state.core
        st = K.move(c.ip, c.fp, c.si, c.pos, c.pi, c.pf, c.sid, c.grid, c.qh, c.ql, c.qk, c.geo,
                    p, coords, t)
        if st != K.OUT_OF_GRID:
            break
        state._regrid()
    _after_external(state, t)
    return state


def apply_recovery(state: SimState, particle: int, time: float | None = None) -> SimState:
    """Recovery rule for ``particle`` at ``time``.

    Finite rate: the particle heals iff it is alone (unconditionally in the
    jump-time variant).  Instantaneous regime: every lone infected particle
    heals, repeated until none is left.  Healthy particles are untouched.
    """
    c = state.core
    t = state.time if time is None else float(time)
    if c.ip[K.IP_REGIME] == K.REGIME_INSTANT:
        _instant_closure(c.ip, c.si, c.pi, c.grid, c.qh, c.ql, c.qk)
    elif c.pi[particle, K.P_INF]:
        if c.ip[K.IP_VARIANT] == K.VARIANT_JUMP or c.grid[c.pi[particle, K.P_SITE], K.G_COUNT] == 1:
            K.heal(c.ip, c.si, c.pi, c.grid, c.qh, c.ql, c.qk, particle)
    _after_external(state, t)
    return state


def sample_recovery_marks(lam: float, horizon: float, stream: RngStream) -> RecoveryMarks:
    """Poisson(lam) point set on ``[0, horizon]``."""
    if not (0 < lam < math.inf):
        raise ParameterError(f"mark intensity must be positive and finite, got {lam}")
    if horizon < 0:
        raise ParameterError("horizon must be non-negative")
    if horizon == 0:
        return RecoveryMarks(np.empty(0))
    return RecoveryMarks(K.mark_times(np.uint64(stream.sid), float(lam), 0.0, float(horizon)))


def run_trial(params: TrialParams, seed: int, *, check_mode: int = 0) -> TrialOutcome:
    """One horizon-truncated run; a deterministic function of ``(params, seed)``."""
    state = SimState(params, seed, stop_on_extinction=True, check_mode=check_mode)
    evolve(state, params.horizon)
    return outcome_of(state)


def outcome_of(state: SimState) -> TrialOutcome:
    horizon = state.params.horizon
    extinct = state.extinct_at
    intervals = state.origin_intervals(close_at=horizon if extinct is None else extinct)
    return TrialOutcome(extinct, extinct is None, intervals, state.contaminated, state.n_events)


def record_trace(state: SimState, window: SpaceTimeBox) -> TraceSet:
    """Trajectories and marks, restricted to ``window``, of the particles in its box at ``t0``."""
    if state.recording_from is None or window.t0 < state.recording_from:
        raise PreconditionError("recording must be enabled before the window opens")
    dom = state.domain
    lo, hi = np.asarray(window.lo), np.asarray(window.hi)
    if np.any(lo > hi) or window.t1 < window.t0 or window.t0 < 0:
        raise RangeError("empty or inverted window")
    if np.any(lo < dom.region_lo) or np.any(hi > dom.region_hi):
        raise RangeError("window outside the simulated region")
    at = K.positions_at(state.wsid, state.origin, float(window.t0), dom.periodic, dom.inner_lo, dom.L)
    inside = np.flatnonzero(np.all((at >= lo) & (at <= hi), axis=1))
    box = (tuple(int(v) for v in lo), tuple(int(v) for v in hi))
    return state._traces(inside, window.t0, window.t1, box)
