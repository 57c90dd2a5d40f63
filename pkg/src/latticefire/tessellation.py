"""Space-time cells of side ``ell`` and duration ``beta`` and the boxes built on them.

Boxes are closed and have rational corners, so membership of a lattice site
is decided exactly.  ``cell_of`` uses half-open cells instead so that every
space-time point belongs to exactly one cell.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import product

import numpy as np

from .dynamics import Trajectory
from .errors import ParameterError, RangeError

CELL_BOX = "cell_box"
SUPER_BOX = "super_box"
EXTENDED_BOX = "extended_box"
QUASI_SUPER_BOX = "quasi_super_box"
SUPER_INTERVAL = "super_interval"
SUPER_CELL = "super_cell"
REGION_KINDS = (CELL_BOX, SUPER_BOX, EXTENDED_BOX, QUASI_SUPER_BOX, SUPER_INTERVAL, SUPER_CELL)


@dataclass(frozen=True)
class TessellationParams:
    ell: int
    beta: int
    eta_overlap: int = 1
    d: int = 1

    def __post_init__(self):
        if self.ell < 1 or self.beta < 1 or self.eta_overlap < 1 or self.d < 1:
            raise ParameterError("ell, beta, eta_overlap and d must be positive")


@dataclass(frozen=True, order=True)
class CellIndex:
    i: tuple
    tau: int

    def __post_init__(self):
        object.__setattr__(self, "i", tuple(int(v) for v in np.atleast_1d(self.i)))
        object.__setattr__(self, "tau", int(self.tau))


@dataclass(frozen=True, order=True)
class BaseHeightIndex:
    """``b`` holds the non-height spatial coordinates followed by time."""

    b: tuple
    h: int
    axis: int

    def __post_init__(self):
        object.__setattr__(self, "b", tuple(int(v) for v in self.b))
        object.__setattr__(self, "h", int(self.h))


@dataclass(frozen=True)
class Interval:
    lo: Fraction
    hi: Fraction

    def contains(self, t) -> bool:
        t = Fraction(t)
        return self.lo <= t <= self.hi

    def contains_interval(self, other: "Interval") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi


@dataclass(frozen=True)
class Box:
    """Closed box ``prod [lo[k], hi[k]]`` with rational corners."""

    lo: tuple
    hi: tuple

    @property
    def d(self) -> int:
        return len(self.lo)

    def contains(self, x) -> bool:
        x = np.atleast_1d(x)
        if len(x) != self.d:
            raise ParameterError(f"point of dimension {len(x)} against a {self.d}-dimensional box")
        return all(lo <= int(c) <= hi for c, lo, hi in zip(x, self.lo, self.hi))

    def contains_box(self, other: "Box") -> bool:
        return all(a <= b for a, b in zip(self.lo, other.lo)) and all(a >= b for a, b in zip(self.hi, other.hi))

    def integer_bounds(self) -> tuple[tuple, tuple]:
        """Smallest and largest lattice coordinates inside the box, per axis."""
        return (tuple(math.ceil(v) for v in self.lo), tuple(math.floor(v) for v in self.hi))

    def sites(self) -> np.ndarray:
        lo, hi = self.integer_bounds()
        if any(a > b for a, b in zip(lo, hi)):
            return np.empty((0, self.d), np.int64)
        axes = [range(a, b + 1) for a, b in zip(lo, hi)]
        return np.array(list(product(*axes)), dtype=np.int64).reshape(-1, self.d)

    def shifted(self, offset) -> "Box":
        return Box(tuple(a + int(o) for a, o in zip(self.lo, offset)),
                   tuple(a + int(o) for a, o in zip(self.hi, offset)))


@dataclass(frozen=True)
class SpaceTimeRegion:
    box: Box
    interval: Interval

    def contains(self, x, t) -> bool:
        return self.interval.contains(t) and self.box.contains(x)


def cube(lo, hi, d: int) -> Box:
    return Box((Fraction(lo),) * d, (Fraction(hi),) * d)


def centered_cube(side, d: int) -> Box:
    """``[-side/2, side/2]^d``."""
    half = Fraction(side) / 2
    return cube(-half, half, d)


def cell_of(site, time: float, params: TessellationParams) -> CellIndex:
    """The half-open cell ``(i, tau)`` with ``i*ell <= x < (i+1)*ell`` and ``tau*beta <= t < (tau+1)*beta``."""
    if time < 0:
        raise ParameterError(f"time must be non-negative, got {time}")
    x = np.atleast_1d(np.asarray(site, dtype=np.int64))
    if len(x) != params.d:
        raise ParameterError(f"site of dimension {len(x)} in a {params.d}-dimensional tessellation")
    i = tuple(int(v) for v in np.floor_divide(x, params.ell))
    tau = math.floor(Fraction(time) / params.beta)
    return CellIndex(i, tau)


def region(kind: str, index, params: TessellationParams):
    """The closed region ``kind`` attached to ``index``.

    ``index`` is a ``CellIndex`` (or an ``(i, tau)`` pair); spatial kinds use
    only ``i`` and ``super_interval`` only ``tau``.
    """
    if not isinstance(index, CellIndex):
        index = CellIndex(*index)
    if len(index.i) != params.d:
        raise ParameterError(f"cell index of dimension {len(index.i)} in a {params.d}-dimensional tessellation")
    ell, eta = Fraction(params.ell), params.eta_overlap
    offsets = {
        CELL_BOX: (Fraction(0), ell),
        SUPER_BOX: (-eta * ell, (eta + 1) * ell),
        EXTENDED_BOX: (-ell / 3, ell + ell / 3),
        QUASI_SUPER_BOX: (-eta * ell / 2, ell + eta * ell / 2),
    }
    interval = Interval(Fraction(index.tau * params.beta), Fraction((index.tau + eta) * params.beta))
    if kind == SUPER_INTERVAL:
        return interval
    if kind == SUPER_CELL:
        return SpaceTimeRegion(region(SUPER_BOX, index, params), interval)
    if kind not in offsets:
        raise ParameterError(f"unknown region kind {kind!r}")
    a, b = offsets[kind]
    base = [Fraction(c) * ell for c in index.i]
    return Box(tuple(c + a for c in base), tuple(c + b for c in base))


def cell_region(index, params: TessellationParams) -> SpaceTimeRegion:
    """The cell itself, ``i*ell + [0, ell]^d`` times ``[tau*beta, (tau+1)*beta]``."""
    if not isinstance(index, CellIndex):
        index = CellIndex(*index)
    box = region(CELL_BOX, index, params)
    return SpaceTimeRegion(box, Interval(Fraction(index.tau * params.beta), Fraction((index.tau + 1) * params.beta)))


def displacement_in(traj: Trajectory, t0: float, t1: float, box: Box) -> bool:
    """True iff ``S_t - S_{t0}`` lies in ``box`` for every ``t`` in ``[t0, t1]``."""
    if t1 < t0:
        raise RangeError(f"empty interval [{t0}, {t1}]")
    if not traj.covers(t0, t1):
        raise RangeError(f"trajectory on [{traj.start}, {traj.end}] does not cover [{t0}, {t1}]")
    j0 = traj.index_at(t0)
    j1 = int(np.searchsorted(traj.times, t1, side="right"))
    disp = traj.sites[j0:j1] - traj.sites[j0]
    lo, hi = box.lo, box.hi
    for k in range(box.d):
        col = disp[:, k]
        if col.min() < lo[k] or col.max() > hi[k]:
            return False
    return True


def base_height(cell: CellIndex, axis: int) -> BaseHeightIndex:
    """Single out spatial ``axis`` (1-based) as the height."""
    d = len(cell.i)
    if not 1 <= axis <= d:
        raise ParameterError(f"axis must lie in 1..{d}, got {axis}")
    k = axis - 1
    b = cell.i[:k] + cell.i[k + 1:] + (cell.tau,)
    return BaseHeightIndex(b, cell.i[k], axis)


def base_height_inverse(bh: BaseHeightIndex) -> CellIndex:
    k = bh.axis - 1
    spatial = bh.b[:-1]
    if not 0 <= k <= len(spatial):
        raise ParameterError(f"axis {bh.axis} incompatible with base of length {len(bh.b)}")
    return CellIndex(spatial[:k] + (bh.h,) + spatial[k:], bh.b[-1])
