from fractions import Fraction
from itertools import product

import numpy as np
import pytest
from hypothesis import given, strategies as st

from latticefire.dynamics import Trajectory
from latticefire.errors import ParameterError, RangeError
from latticefire.tessellation import (CELL_BOX, EXTENDED_BOX, QUASI_SUPER_BOX, SUPER_BOX, SUPER_CELL, SUPER_INTERVAL,
                                      BaseHeightIndex, Box, CellIndex, TessellationParams, base_height,
                                      base_height_inverse, cell_of, centered_cube, displacement_in, region)

P = TessellationParams(ell=4, beta=2)


def test_cell_of_examples():
    assert cell_of([0], 0.0, P) == CellIndex((0,), 0)
    assert cell_of([4], 2.0, P) == CellIndex((1,), 1)
    assert cell_of([-1], 0.0, P).i == (-1,)


def test_cell_of_rejects_negative_time():
    with pytest.raises(ParameterError):
        cell_of([0], -0.5, P)


@given(st.integers(-100, 100), st.floats(0, 100), st.integers(1, 9), st.integers(1, 5))
def test_cells_tile_space_time(x, t, ell, beta):
    p = TessellationParams(ell, beta)
    c = cell_of([x], t, p)
    assert c.i[0] * ell <= x < (c.i[0] + 1) * ell
    assert c.tau * beta <= t < (c.tau + 1) * beta


def test_region_examples():
    assert region(SUPER_BOX, ((0,), 0), TessellationParams(4, 1, 1)) == Box((-4,), (8,))
    assert region(EXTENDED_BOX, ((0,), 0), TessellationParams(6, 1)) == Box((-2,), (8,))
    assert region(QUASI_SUPER_BOX, ((0,), 0), TessellationParams(4, 1, 1)) == Box((-2,), (6,))


def test_fractional_corners_are_exact():
    b = region(EXTENDED_BOX, ((0,), 0), TessellationParams(4, 1))
    assert b.lo == (Fraction(-4, 3),) and b.hi == (Fraction(16, 3),)
    assert b.contains([-1]) and not b.contains([-2]) and b.contains([5]) and not b.contains([6])
    assert b.integer_bounds() == ((-1,), (5,))


def test_super_interval_and_cell():
    p = TessellationParams(3, 2, 2)
    iv = region(SUPER_INTERVAL, ((1,), 3), p)
    assert (iv.lo, iv.hi) == (6, 10)
    sc = region(SUPER_CELL, ((1,), 3), p)
    assert sc.contains([-3], 6) and sc.contains([12], 10) and not sc.contains([13], 8) and not sc.contains([0], 11)


@given(st.integers(1, 12), st.integers(1, 4), st.integers(1, 3), st.lists(st.integers(-5, 5), min_size=1, max_size=3))
def test_containments(ell, beta, eta, i):
    p = TessellationParams(ell, beta, eta, len(i))
    idx = CellIndex(tuple(i), 0)
    chain = [region(k, idx, p) for k in (CELL_BOX, EXTENDED_BOX, QUASI_SUPER_BOX, SUPER_BOX)]
    if ell >= 3:
        for small, big in zip(chain, chain[1:]):
            assert big.contains_box(small)
    assert chain[3].contains_box(chain[0])


def test_unknown_kind():
    with pytest.raises(ParameterError):
        region("hyper_box", ((0,), 0), P)


def test_params_validation():
    for bad in [(0, 1), (3, 0), (3, 1, 0), (3, 1, 1, 0)]:
        with pytest.raises(ParameterError):
            TessellationParams(*bad)


def walk(steps, d=1):
    sites = np.cumsum(np.vstack([np.zeros((1, d), int), steps]), axis=0)
    return Trajectory(np.arange(len(sites), dtype=float), sites, float(len(sites)))


def test_displacement_examples():
    still = Trajectory([0.0], [[3]], 5.0)
    assert displacement_in(still, 0, 5, Box((0,), (0,)))
    assert not displacement_in(walk([[1]]), 0, 1, Box((0,), (0,)))
    q6 = centered_cube(6, 1)
    assert displacement_in(walk([[1], [1], [1], [-1], [-1]]), 0, 5, q6)
    assert not displacement_in(walk([[1], [1], [1], [1], [-1]]), 0, 5, q6)
    # measured from the position at t0, not the start
    assert displacement_in(walk([[1], [1], [1], [1], [-1]]), 1, 5, q6)


def test_displacement_range_errors():
    with pytest.raises(RangeError):
        displacement_in(walk([[1]]), 0, 10, Box((0,), (0,)))
    with pytest.raises(RangeError):
        displacement_in(walk([[1]]), 1, 0, Box((0,), (0,)))


def test_base_height_examples():
    assert base_height(CellIndex((5,), 3), 1) == BaseHeightIndex((3,), 5, 1)
    assert base_height(CellIndex((2, 7), 3), 2) == BaseHeightIndex((2, 3), 7, 2)
    with pytest.raises(ParameterError):
        base_height(CellIndex((2, 7), 3), 3)


def test_base_height_roundtrip_random():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        d = int(rng.integers(1, 4))
        cell = CellIndex(tuple(rng.integers(-50, 50, d)), int(rng.integers(0, 50)))
        axis = int(rng.integers(1, d + 1))
        bh = base_height(cell, axis)
        assert base_height_inverse(bh) == cell
        assert base_height(base_height_inverse(bh), axis) == bh


def test_base_height_bijective_on_small_window():
    for axis in (1, 2):
        cells = [CellIndex((a, b), t) for a, b, t in product(range(-2, 3), range(-2, 3), range(3))]
        images = {base_height(c, axis) for c in cells}
        assert len(images) == len(cells)
