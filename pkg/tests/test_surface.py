import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latticefire.errors import ParameterError, PreconditionError
from latticefire.surface import (CellEventField, Infeasible, LipschitzSurface, brute_force_minimal_surface,
                                 extract_minimal_surface, extract_two_sided, field_from_events, field_to_text,
                                 is_lipschitz, read_field, read_surface, surrounds_origin, write_field, write_surface,
                                 zero_height_percolation)
from latticefire.tessellation import CellIndex


def threshold_field(mins, h_max, lo=None):
    """Column ``b`` good exactly at heights ``>= mins[b]``."""
    mins = np.asarray(mins)
    h = np.arange(h_max + 1)
    ind = h >= mins[..., None]
    return CellEventField(lo if lo is not None else (0,) * mins.ndim, ind)


def test_is_lipschitz_examples():
    assert is_lipschitz(np.full((3, 4), 2))
    assert not is_lipschitz([0, 2])
    assert is_lipschitz([0, 1, 2, 1, 0])
    assert not is_lipschitz([[0, 1], [2, 1]])
    with pytest.raises(ParameterError):
        is_lipschitz([0, 1], window=(3,))


def test_minimal_surface_examples():
    assert np.array_equal(extract_minimal_surface(threshold_field(np.zeros((3, 3), int), 2)), np.zeros((3, 3)))
    fld = threshold_field([0, 2, 0, 0, 0], 3)
    assert extract_minimal_surface(fld).tolist() == [1, 2, 1, 0, 0]
    assert brute_force_minimal_surface(fld).tolist() == [1, 2, 1, 0, 0]


def test_bad_column_is_infeasible():
    ind = np.ones((4, 3), bool)
    ind[2] = False
    res = extract_minimal_surface(CellEventField((5,), ind))
    assert isinstance(res, Infeasible) and not res and res.column == (7,)
    assert isinstance(brute_force_minimal_surface(CellEventField((5,), ind)), Infeasible)
    assert isinstance(brute_force_minimal_surface(CellEventField((0,), np.zeros((3, 3), bool))), Infeasible)


def test_forced_overflow_is_infeasible():
    # column 0 only good at 3, column 2 only good at 0: distance 2 cannot absorb a drop of 3
    ind = np.zeros((3, 4), bool)
    ind[0, 3] = True
    ind[1, :] = True
    ind[2, 0] = True
    assert isinstance(extract_minimal_surface(CellEventField((0,), ind)), Infeasible)
    assert isinstance(brute_force_minimal_surface(CellEventField((0,), ind)), Infeasible)


def test_single_column():
    ind = np.zeros((1, 5), bool)
    ind[0, 3] = True
    assert extract_minimal_surface(CellEventField((0,), ind)).tolist() == [3]
    assert brute_force_minimal_surface(CellEventField((0,), ind)).tolist() == [3]


def test_brute_force_guard():
    with pytest.raises(ParameterError):
        brute_force_minimal_surface(CellEventField((0,), np.ones((9, 2), bool)))
    with pytest.raises(ParameterError):
        brute_force_minimal_surface(CellEventField((0,), np.ones((2, 7), bool)))


def test_field_validation():
    with pytest.raises(ParameterError):
        CellEventField((0, 0), np.ones((3, 2), bool))
    with pytest.raises(ParameterError):
        CellEventField((0,), np.ones((0, 2), bool))


def check_postconditions(fld, F):
    assert is_lipschitz(F)
    good = fld.indicator.reshape(fld.n_columns, -1)
    flat = np.asarray(F).ravel()
    assert np.all(good[np.arange(fld.n_columns), flat])
    # lowering any single value breaks Lipschitz-ness or lands on a bad cell
    for c in range(fld.n_columns):
        if flat[c] == 0:
            continue
        G = flat.copy()
        G[c] -= 1
        assert not (is_lipschitz(G.reshape(fld.shape)) and good[c, G[c]])


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([(4,), (6,), (2, 3), (2, 2)]), st.integers(0, 4),
       st.floats(0.2, 0.9))
def test_oracle_equivalence_random(seed, shape, h_max, p_good):
    rng = np.random.default_rng(seed)
    fld = CellEventField((0,) * len(shape), rng.random(shape + (h_max + 1,)) < p_good)
    fast, slow = extract_minimal_surface(fld), brute_force_minimal_surface(fld)
    assert isinstance(fast, Infeasible) == isinstance(slow, Infeasible)
    if not isinstance(fast, Infeasible):
        assert np.array_equal(fast, slow)
        check_postconditions(fld, fast)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_monotone_in_the_field(seed):
    rng = np.random.default_rng(seed)
    shape = (int(rng.integers(2, 6)), int(rng.integers(1, 4)))
    ind = rng.random(shape + (4,)) < 0.6
    before = extract_minimal_surface(CellEventField((0, 0), ind))
    flip = ind.copy()
    bad = np.argwhere(~flip)
    if len(bad) == 0:
        return
    flip[tuple(bad[rng.integers(len(bad))])] = True
    after = extract_minimal_surface(CellEventField((0, 0), flip))
    if isinstance(before, Infeasible):
        return
    assert not isinstance(after, Infeasible)
    assert np.all(after <= before)


def test_two_sided():
    up = threshold_field([0, 2, 0, 0, 0], 3)
    down = threshold_field([0] * 5, 3)
    s = extract_two_sided(up, down)
    assert s.F_plus.tolist() == [1, 2, 1, 0, 0] and s.F_minus.tolist() == [0] * 5
    s0 = extract_two_sided(down, down)
    assert not s0.F_plus.any() and not s0.F_minus.any()
    bad = CellEventField((0,), np.zeros((5, 4), bool))
    assert extract_two_sided(up, bad).side == "minus"
    assert extract_two_sided(bad, down).side == "plus"
    with pytest.raises(PreconditionError):
        extract_two_sided(up, threshold_field([0] * 4, 3))


def test_surface_validation():
    with pytest.raises(ParameterError):
        LipschitzSurface((0,), [0, 2], [0, 0])
    with pytest.raises(ParameterError):
        LipschitzSurface((0,), [0, -1], [0, 0])
    with pytest.raises(ParameterError):
        LipschitzSurface((0,), [0, 1], [0])


def test_surrounds_origin():
    s = extract_two_sided(threshold_field([0] * 5, 2, lo=(-2,)), threshold_field([0] * 5, 2, lo=(-2,)))
    assert surrounds_origin(s)
    assert not surrounds_origin(Infeasible((1,), "plus"), lo=(-2,), shape=(5,))
    with pytest.raises(ParameterError):
        surrounds_origin(LipschitzSurface((1,), [0, 0], [0, 0]))
    with pytest.raises(ParameterError):
        surrounds_origin(Infeasible((1,)))


def test_percolation_examples():
    r = zero_height_percolation(np.zeros((4, 5), int))
    assert r.n_components == 1 and r.largest == 20 and r.spans and r.spanning_axes == (0, 1)
    r = zero_height_percolation(np.ones((4, 5), int))
    assert r.n_components == 0 and r.largest == 0 and not r.spans
    checker = np.indices((5, 5)).sum(axis=0) % 2
    r = zero_height_percolation(checker)
    assert r.largest == 1 and r.n_components == 13 and not r.spans
    r = zero_height_percolation([[0, 1, 1], [0, 0, 1], [1, 0, 1]])
    assert r.spans and r.spanning_axes == (0,)


def test_field_from_events():
    fld = field_from_events(lambda c: c.i[0] >= 2 or c.tau == 1, lo=(0,), shape=(3,), h_max=3, axis=1)
    assert fld.indicator.tolist() == [[False, False, True, True], [True] * 4, [False, False, True, True]]
    down = field_from_events(lambda c: c.i[0] <= -1, lo=(0,), shape=(2,), h_max=2, axis=1, sign=-1)
    assert down.indicator.tolist() == [[False, True, True]] * 2
    with pytest.raises(ParameterError):
        field_from_events(lambda c: True, (0,), (2,), 1, axis=1, sign=0)
    two = field_from_events(lambda c: c == CellIndex((1, 3), 0), lo=(3, 0), shape=(1, 1), h_max=2, axis=1)
    assert two.indicator.tolist() == [[[False, True, False]]]


def test_text_roundtrip():
    rng = np.random.default_rng(0)
    fld = CellEventField((-1, 2), rng.random((3, 2, 4)) < 0.5, {"d": 2, "ell": 8, "beta": 4, "eta": 1, "axis": 2})
    text = field_to_text(fld)
    assert text.splitlines()[0] == "2 8 4 1 2 3"
    back = read_field(io.StringIO(text))
    assert back.lo == fld.lo and np.array_equal(back.indicator, fld.indicator)
    assert back.meta == {"d": 2, "ell": 8, "beta": 4, "eta": 1, "axis": 2}
    s = LipschitzSurface((-1, 2), rng.integers(0, 1, (3, 2)) + 1, np.zeros((3, 2), int))
    buf = io.StringIO()
    write_surface(s, buf, fld.meta, 3)
    buf.seek(0)
    back = read_surface(buf)
    assert back.lo == s.lo and np.array_equal(back.F_plus, s.F_plus) and np.array_equal(back.F_minus, s.F_minus)


def test_read_field_errors():
    with pytest.raises(ParameterError):
        read_field(io.StringIO(""))
    with pytest.raises(ParameterError):
        read_field(io.StringIO("1 4 1 1 1 1\n0 0 1\n"))
    with pytest.raises(ParameterError):
        read_field(io.StringIO("1 4 1 1 1 1\n0 0 1\n0 1 2\n"))
    with pytest.raises(ParameterError):
        read_field(io.StringIO("1 4 1\n0 0 1\n"))
    buf = io.StringIO()
    write_field(CellEventField((0,), np.ones((2, 2), bool)), buf)
    assert buf.getvalue().splitlines()[1:] == ["0 0 1", "0 1 1", "1 0 1", "1 1 1"]
