"""Minimal Lipschitz surfaces of good cells on a finite base window.

A base window is a box of base coordinates ``b`` (the non-height spatial
coordinates followed by time); a field gives, for every ``b`` and every
height ``0 <= h <= h_max``, whether the cell event holds there.  Functions
on the window are integer arrays of the window's shape.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from itertools import product
from typing import Callable

import numpy as np
from scipy import ndimage

from .errors import ParameterError, PreconditionError
from .tessellation import BaseHeightIndex, base_height_inverse

BRUTE_MAX_COLUMNS = 8
BRUTE_MAX_HEIGHT = 5


@dataclass
class CellEventField:
    """``indicator[b - lo][h]`` says whether the event holds at base ``b``, height ``h``."""

    lo: tuple
    indicator: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.indicator = np.asarray(self.indicator, dtype=bool)
        self.lo = tuple(int(v) for v in self.lo)
        if self.indicator.ndim != len(self.lo) + 1:
            raise ParameterError("indicator needs one axis per base coordinate plus the height axis")
        if min(self.indicator.shape, default=0) < 1:
            raise ParameterError("empty window")

    @property
    def shape(self) -> tuple:
        return self.indicator.shape[:-1]

    @property
    def h_max(self) -> int:
        return self.indicator.shape[-1] - 1

    @property
    def n_columns(self) -> int:
        return int(np.prod(self.shape))

    def base(self, idx) -> tuple:
        return tuple(int(a + b) for a, b in zip(self.lo, idx))

    def contains_base(self, b) -> bool:
        return all(0 <= int(x) - a < n for x, a, n in zip(b, self.lo, self.shape))


@dataclass(frozen=True)
class Infeasible:
    """No good Lipschitz function with heights ``<= h_max``; ``column`` is a base point that failed."""

    column: tuple
    side: str | None = None

    def __bool__(self):
        return False


@dataclass
class LipschitzSurface:
    lo: tuple
    F_plus: np.ndarray
    F_minus: np.ndarray

    def __post_init__(self):
        self.F_plus = np.asarray(self.F_plus, dtype=np.int64)
        self.F_minus = np.asarray(self.F_minus, dtype=np.int64)
        if self.F_plus.shape != self.F_minus.shape:
            raise ParameterError("both sides must live on the same window")
        if np.any(self.F_plus < 0) or np.any(self.F_minus < 0):
            raise ParameterError("surface heights are non-negative")
        if not (is_lipschitz(self.F_plus) and is_lipschitz(self.F_minus)):
            raise ParameterError("surface sides must be Lipschitz")


def is_lipschitz(F, window=None) -> bool:
    """Nearest-neighbour differences at most 1, which is equivalent to the L1 condition on a box."""
    F = np.asarray(F, dtype=np.int64)
    if window is not None and tuple(np.shape(F)) != tuple(window):
        raise ParameterError(f"function of shape {F.shape} on window {tuple(window)}")
    return all(np.all(np.abs(np.diff(F, axis=a)) <= 1) for a in range(F.ndim))


def _neighbours(shape: tuple) -> list[list[int]]:
    n = int(np.prod(shape))
    idx = np.arange(n).reshape(shape)
    out: list[list[int]] = [[] for _ in range(n)]
    for a in range(len(shape)):
        lo = np.take(idx, range(shape[a] - 1), axis=a).ravel()
        hi = np.take(idx, range(1, shape[a]), axis=a).ravel()
        for u, v in zip(lo, hi):
            out[u].append(int(v))
            out[v].append(int(u))
    return out


def extract_minimal_surface(fld: CellEventField):
    """Least good Lipschitz function on the window, or ``Infeasible``.

    Starts from each column's lowest good height and sweeps the columns in
    lexicographic order, raising any column below a neighbour minus one to
    its next good height, until a sweep changes nothing.
    """
    good = fld.indicator.reshape(fld.n_columns, fld.h_max + 1)
    nbrs = _neighbours(fld.shape)
    # next_good[c, h] = smallest good height >= h, or h_max + 1
    nxt = np.full((fld.n_columns, fld.h_max + 2), fld.h_max + 1, np.int64)
    for h in range(fld.h_max, -1, -1):
        nxt[:, h] = np.where(good[:, h], h, nxt[:, h + 1])
    F = nxt[:, 0].copy()
    changed = True
    while changed:
        changed = False
        for c in range(fld.n_columns):
            if F[c] > fld.h_max:
                return Infeasible(fld.base(np.unravel_index(c, fld.shape)))
            need = max((F[v] for v in nbrs[c]), default=0) - 1
            if F[c] < need:
                F[c] = nxt[c, min(need, fld.h_max + 1)]
                changed = True
                if F[c] > fld.h_max:
                    return Infeasible(fld.base(np.unravel_index(c, fld.shape)))
    return F.reshape(fld.shape)


def brute_force_minimal_surface(fld: CellEventField):
    """Pointwise minimum of every good Lipschitz function with heights ``<= h_max``, by enumeration."""
    if fld.n_columns > BRUTE_MAX_COLUMNS or fld.h_max > BRUTE_MAX_HEIGHT:
        raise ParameterError(f"enumeration limited to {BRUTE_MAX_COLUMNS} columns and h_max <= {BRUTE_MAX_HEIGHT}")
    cand = _lipschitz_table(fld.shape, fld.h_max)
    good = fld.indicator.reshape(fld.n_columns, fld.h_max + 1)
    ok = np.all(good[np.arange(fld.n_columns), cand], axis=1)
    if not ok.any():
        bad = np.flatnonzero(~good.any(axis=1))
        c = int(bad[0]) if len(bad) else 0
        return Infeasible(fld.base(np.unravel_index(c, fld.shape)))
    return cand[ok].min(axis=0).reshape(fld.shape)


_TABLES: dict = {}


def _lipschitz_table(shape: tuple, h_max: int) -> np.ndarray:
    """All Lipschitz functions window -> {0..h_max}, one per row (flattened)."""
    key = (tuple(shape), h_max)
    if key not in _TABLES:
        n = int(np.prod(shape))
        allf = np.array(list(product(range(h_max + 1), repeat=n)), dtype=np.int64).reshape(-1, n)
        keep = np.array([is_lipschitz(f.reshape(shape)) for f in allf], dtype=bool) if len(allf) else allf
        _TABLES[key] = allf[keep]
    return _TABLES[key]


def extract_two_sided(field_up: CellEventField, field_down: CellEventField):
    """Both sides extracted independently; an ``Infeasible`` names the failing side."""
    if field_up.lo != field_down.lo or field_up.shape != field_down.shape:
        raise PreconditionError("the two fields must share the base window")
    up = extract_minimal_surface(field_up)
    if isinstance(up, Infeasible):
        return Infeasible(up.column, "plus")
    down = extract_minimal_surface(field_down)
    if isinstance(down, Infeasible):
        return Infeasible(down.column, "minus")
    return LipschitzSurface(field_up.lo, up, down)


def surrounds_origin(surface, lo=None, shape=None) -> bool:
    """Both sides defined on the whole window, which must contain the origin's base point.

    For an ``Infeasible`` result pass the window as ``lo`` and ``shape``.
    """
    if isinstance(surface, LipschitzSurface):
        lo, shape = surface.lo, surface.F_plus.shape
    elif lo is None or shape is None:
        raise ParameterError("an infeasible result needs its window")
    if not all(a <= 0 < a + n for a, n in zip(lo, shape)):
        raise ParameterError(f"window at {tuple(lo)} of shape {tuple(shape)} does not contain the origin")
    return isinstance(surface, LipschitzSurface)


@dataclass(frozen=True)
class PercolationReport:
    n_components: int
    largest: int
    spans: bool
    spanning_axes: tuple = ()


def zero_height_percolation(F, window=None) -> PercolationReport:
    """Nearest-neighbour clusters of ``{b : F(b) = 0}`` and whether one joins opposite faces."""
    F = np.asarray(F, dtype=np.int64)
    if window is not None and tuple(F.shape) != tuple(window):
        raise ParameterError(f"function of shape {F.shape} on window {tuple(window)}")
    labels, n = ndimage.label(F == 0, structure=ndimage.generate_binary_structure(F.ndim, 1))
    if n == 0:
        return PercolationReport(0, 0, False)
    sizes = np.bincount(labels.ravel())[1:]
    axes = []
    for a in range(F.ndim):
        first = set(np.unique(np.take(labels, 0, axis=a))) - {0}
        last = set(np.unique(np.take(labels, F.shape[a] - 1, axis=a))) - {0}
        if first & last:
            axes.append(a)
    return PercolationReport(int(n), int(sizes.max()), bool(axes), tuple(axes))


# -- building fields from cell events -------------------------------------------------

def field_from_events(event: Callable, lo, shape, h_max: int, axis: int, sign: int = 1, meta=None) -> CellEventField:
    """Evaluate ``event(cell)`` at every base point and height ``sign * h``, ``0 <= h <= h_max``."""
    if sign not in (1, -1):
        raise ParameterError("sign must be +1 or -1")
    lo = tuple(int(v) for v in lo)
    ind = np.zeros(tuple(shape) + (h_max + 1,), bool)
    for idx in np.ndindex(*shape):
        b = tuple(a + i for a, i in zip(lo, idx))
        for h in range(h_max + 1):
            ind[idx + (h,)] = bool(event(base_height_inverse(BaseHeightIndex(b, sign * h, axis))))
    return CellEventField(lo, ind, dict(meta or {}, axis=axis, sign=sign))


# -- text format ---------------------------------------------------------------------

HEADER_KEYS = ("d", "ell", "beta", "eta", "axis", "h_max")


def _header(meta: dict, h_max: int) -> str:
    vals = [meta.get(k, 0) for k in HEADER_KEYS[:-1]] + [h_max]
    return " ".join(str(v) for v in vals)


def write_field(fld: CellEventField, fh) -> None:
    """Header ``d ell beta eta axis h_max``, then ``b... h value`` per cell, base in C order."""
    fh.write(_header(fld.meta, fld.h_max) + "\n")
    for idx in np.ndindex(*fld.shape):
        b = " ".join(str(v) for v in fld.base(idx))
        for h in range(fld.h_max + 1):
            fh.write(f"{b} {h} {int(fld.indicator[idx + (h,)])}\n")


def _parse_header(line: str) -> dict:
    parts = line.split()
    if len(parts) != len(HEADER_KEYS):
        raise ParameterError(f"bad header {line!r}")
    return dict(zip(HEADER_KEYS, (int(p) for p in parts)))


def read_field(fh) -> CellEventField:
    lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ParameterError("empty field file")
    meta = _parse_header(lines[0])
    h_max = meta.pop("h_max")
    rows = np.array([[int(v) for v in ln.split()] for ln in lines[1:]], dtype=np.int64)
    if rows.ndim != 2 or rows.shape[1] < 3:
        raise ParameterError("field rows need base coordinates, height and value")
    base = rows[:, :-2]
    lo = base.min(axis=0)
    shape = tuple(base.max(axis=0) - lo + 1)
    ind = np.zeros(shape + (h_max + 1,), bool)
    seen = np.zeros(ind.shape, bool)
    for r in rows:
        idx = tuple(r[:-2] - lo) + (int(r[-2]),)
        if not 0 <= r[-2] <= h_max or r[-1] not in (0, 1):
            raise ParameterError(f"bad field row {r.tolist()}")
        ind[idx] = bool(r[-1])
        seen[idx] = True
    if not seen.all():
        raise ParameterError("field file leaves some cells undefined")
    return CellEventField(tuple(int(v) for v in lo), ind, meta)


def write_surface(surface: LipschitzSurface, fh, meta=None, h_max: int = 0) -> None:
    """Same header as fields, then ``b... F_plus F_minus`` per base point."""
    fh.write(_header(meta or {}, h_max) + "\n")
    for idx in np.ndindex(*surface.F_plus.shape):
        b = " ".join(str(int(a + i)) for a, i in zip(surface.lo, idx))
        fh.write(f"{b} {int(surface.F_plus[idx])} {int(surface.F_minus[idx])}\n")


def read_surface(fh) -> LipschitzSurface:
    lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    _parse_header(lines[0])
    rows = np.array([[int(v) for v in ln.split()] for ln in lines[1:]], dtype=np.int64)
    base = rows[:, :-2]
    lo = base.min(axis=0)
    shape = tuple(base.max(axis=0) - lo + 1)
    fp = np.full(shape, -1, np.int64)
    fm = np.full(shape, -1, np.int64)
    for r in rows:
        idx = tuple(r[:-2] - lo)
        fp[idx], fm[idx] = r[-2], r[-1]
    if np.any(fp < 0) or np.any(fm < 0):
        raise ParameterError("surface file leaves some base points undefined or negative")
    return LipschitzSurface(tuple(int(v) for v in lo), fp, fm)


def field_to_text(fld: CellEventField) -> str:
    buf = io.StringIO()
    write_field(fld, buf)
    return buf.getvalue()
