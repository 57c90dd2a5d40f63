import math
from collections import Counter
from itertools import product

import numpy as np
import pytest
from scipy import stats

from latticefire.dynamics import (InvariantViolation, SimState, SpaceTimeBox, TrialParams, Trajectory, apply_recovery,
                                  evolve, move_particle, record_trace, run_trial, sample_recovery_marks, step_events)
from latticefire.errors import ParameterError, PreconditionError, RangeError
from latticefire.rng import Purpose, make_stream


def site_table(state):
    counts, infected = Counter(), Counter()
    for x, inf in zip(map(tuple, state.positions.tolist()), state.infected):
        counts[x] += 1
        infected[x] += int(inf)
    return counts, infected


def check_boundary(state, params):
    counts, infected = site_table(state)
    assert sum(counts.values()) == state.n
    assert sum(infected.values()) == state.n_infected
    for x, k in counts.items():
        i = infected[x]
        assert 0 <= i <= k
        if params.variant == "contact":
            assert i in (0, k), f"mixed site {x} at t={state.time}"
        if math.isinf(params.lam):
            assert not (k == 1 and i == 1), f"lone infected particle at {x}, t={state.time}"


# -- recovery marks ------------------------------------------------------------------

def test_marks_mean_cardinality():
    n = [len(sample_recovery_marks(1.0, 10.0, make_stream(s, Purpose.RECOVERY, (0,)))) for s in range(10_000)]
    assert abs(np.mean(n) - 10) < 3 * math.sqrt(10 / len(n))


def test_marks_void_probability():
    empty = [len(sample_recovery_marks(0.1, 10.0, make_stream(s, Purpose.RECOVERY, (1,)))) == 0 for s in range(10_000)]
    p = math.exp(-1)
    assert abs(np.mean(empty) - p) < 3 * math.sqrt(p * (1 - p) / len(empty))


def test_marks_sorted_with_exponential_gaps():
    m = sample_recovery_marks(2.0, 5000.0, make_stream(3, Purpose.RECOVERY, (0,))).times
    assert np.all(np.diff(m) > 0) and m[0] >= 0 and m[-1] <= 5000
    assert stats.kstest(np.diff(m), "expon", args=(0, 0.5)).pvalue > 0.01


def test_marks_zero_horizon_and_errors():
    assert len(sample_recovery_marks(1.0, 0.0, make_stream(0, Purpose.RECOVERY))) == 0
    for lam in (0.0, -1.0, math.inf):
        with pytest.raises(ParameterError):
            sample_recovery_marks(lam, 1.0, make_stream(0, Purpose.RECOVERY))


# -- invariants at every event boundary -------------------------------------------------

@pytest.mark.parametrize("lam", [0.0, 0.5, math.inf])
@pytest.mark.parametrize("variant", ["contact", "jump"])
def test_invariants_event_by_event(lam, variant):
    p = TrialParams(rho=2, lam=lam, d=1, L=9, horizon=8, variant=variant, halo_margin=12)
    for seed in range(3):
        s = SimState(p, seed)
        check_boundary(s, p)
        last = 0.0
        while s.time < p.horizon:
            before = s.n_events
            step_events(s, 1)
            if s.n_events == before:
                break
            assert s.time >= last
            last = s.time
            check_boundary(s, p)


@pytest.mark.parametrize("boundary", ["halo", "periodic"])
def test_kernel_full_checks_d2(boundary):
    for lam in (0.0, 0.5, math.inf):
        for variant in ("contact", "jump"):
            p = TrialParams(rho=2, lam=lam, d=2, L=7, horizon=5, variant=variant, boundary=boundary, halo_margin=4)
            s = evolve(SimState(p, 11, check_mode=2), 5.0)
            check_boundary(s, p)


def test_periodic_conservation():
    p = TrialParams(rho=2, lam=0.5, d=1, L=15, horizon=50, boundary="periodic")
    for seed in range(5):
        s = SimState(p, seed)
        n0 = s.n
        evolve(s, 50.0)
        counts, _ = site_table(s)
        assert sum(counts.values()) == n0
        assert all(-7 <= x[0] <= 7 for x in counts)


def test_periodic_stationarity():
    # occupancy at t=10 on a ring of 64 sites, aggregated over independent seeds
    p = TrialParams(rho=1, lam=0.0, d=1, L=64, horizon=10, boundary="periodic")
    occ = []
    for seed in range(40):
        s = SimState(p, seed, add_origin_particle=False)
        evolve(s, 10.0)
        counts, _ = site_table(s)
        occ.extend(counts.get((x,), 0) for x in range(-31, 33))
    occ = np.array(occ)
    top = int(stats.poisson.isf(5 / len(occ), 1.0))
    obs = np.array([(occ == k).sum() for k in range(top)] + [(occ >= top).sum()])
    exp = np.append(stats.poisson.pmf(np.arange(top), 1.0), stats.poisson.sf(top - 1, 1.0)) * len(occ)
    assert stats.chisquare(obs, exp).pvalue > 0.01


# -- rules on hand-built states ------------------------------------------------------

def build(sites, infected, lam=1.0, variant="contact", d=1):
    p = TrialParams(rho=1, lam=lam, d=d, L=21, horizon=100, variant=variant, halo_margin=5)
    return SimState.from_particles(p, 0, sites, infected)


def test_lone_infected_recovers_on_mark():
    s = build([[0]], [True])
    apply_recovery(s, 0)
    assert s.n_infected == 0


def test_crowded_infected_survives_mark():
    s = build([[0], [0], [0]], [True, True, True])
    apply_recovery(s, 0)
    assert s.n_infected == 3


def test_recovery_on_healthy_is_noop():
    s = build([[0], [3]], [False, True])
    apply_recovery(s, 0)
    assert s.n_infected == 1


def test_jump_variant_recovers_unconditionally():
    s = build([[0], [0]], [True, True], variant="jump")
    apply_recovery(s, 0)
    assert s.n_infected == 1


def test_contact_rule_infects_whole_site():
    s = build([[0], [0], [0], [1]], [False, False, False, True], lam=0.0)
    p = int(np.flatnonzero(s.positions[:, 0] == 1)[0])
    move_particle(s, p, [0])
    assert s.n_infected == 4


def test_jump_variant_contact():
    s = build([[0], [0], [1]], [False, False, True], lam=0.0, variant="jump")
    p = int(np.flatnonzero(s.positions[:, 0] == 1)[0])
    move_particle(s, p, [0])
    assert s.n_infected == 3
    # healthy onto infected: the mover is infected
    s = build([[0], [1], [5]], [True, False, False], lam=0.0, variant="jump")
    q = int(np.flatnonzero(s.positions[:, 0] == 1)[0])
    move_particle(s, q, [0])
    assert s.n_infected == 2
    # a mark leaves a mixed site behind, which this variant allows
    s = build([[0], [0]], [True, True], lam=1.0, variant="jump")
    apply_recovery(s, 0)
    assert site_table(s)[1][(0,)] == 1 and site_table(s)[0][(0,)] == 2


def test_instant_cascade():
    s = build([[0], [0]], [True, True], lam=math.inf)
    move_particle(s, 0, [1])
    assert s.n_infected == 0


def _instant_fixed_point(counts, infected):
    """Independent oracle: heal lone infected sites until none remain."""
    infected = list(infected)
    changed = True
    while changed:
        changed = False
        for x in range(len(counts)):
            if counts[x] == 1 and infected[x] == 1:
                infected[x] = 0
                changed = True
    return infected


def test_instant_regime_exhaustive_small_states():
    # every arrangement of up to 3 particles on 3 sites, each infected site pure, then one move
    for counts in product(range(3), repeat=3):
        if not 1 <= sum(counts) <= 3:
            continue
        for inf_mask in product((0, 1), repeat=3):
            sites = [[x] for x in range(3) for _ in range(counts[x])]
            flags = [bool(inf_mask[x]) for x in range(3) for _ in range(counts[x])]
            s = build(sites, flags, lam=math.inf)
            want = _instant_fixed_point(counts, [counts[x] * inf_mask[x] for x in range(3)])
            assert s.n_infected == sum(want)
            for p in range(s.n):
                for target in range(3):
                    s2 = build(sites, flags, lam=math.inf)
                    before_c, before_i = site_table(s2)
                    src = int(s2.positions[p, 0])
                    move_particle(s2, p, [target])
                    c = [before_c.get((x,), 0) for x in range(3)]
                    i = [before_i.get((x,), 0) for x in range(3)]
                    mover_inf = i[src] > 0
                    c[src] -= 1
                    c[target] += 1
                    if mover_inf:
                        i[src] -= 1
                        i[target] += 1
                    if i[target] > 0:
                        i[target] = c[target]
                    assert s2.n_infected == sum(_instant_fixed_point(c, i))


def test_check_mode_detects_violation():
    p = TrialParams(rho=1, lam=0.0, d=1, L=5, horizon=10, halo_margin=5)
    with pytest.raises(InvariantViolation):
        SimState.from_particles(p, 0, [[0], [0]], [True, False], check_mode=2)


# -- run_trial -----------------------------------------------------------------------

def test_no_recovery_always_survives():
    p = TrialParams(rho=1, lam=0.0, d=1, L=11, horizon=20)
    for seed in range(10):
        out = run_trial(p, seed)
        assert out.survived_to_horizon and out.extinct_at is None


def test_zero_horizon():
    out = run_trial(TrialParams(rho=1, lam=1.0, d=1, L=5, horizon=0), 0)
    assert out.survived_to_horizon
    assert out.origin_infected_intervals == [(0.0, 0.0)]


def test_run_trial_deterministic():
    p = TrialParams(rho=2, lam=0.5, d=2, L=9, horizon=10)
    a, b = run_trial(p, 42), run_trial(p, 42)
    assert a == b


def test_origin_intervals_disjoint_sorted():
    p = TrialParams(rho=3, lam=0.3, d=1, L=11, horizon=30)
    for seed in range(20):
        iv = run_trial(p, seed).origin_infected_intervals
        for (a, b), (c, _) in zip(iv, iv[1:]):
            assert a <= b < c


def test_low_density_fast_recovery_dies_out():
    p = TrialParams(rho=0.2, lam=5.0, d=1, L=21, horizon=50)
    extinct = sum(not run_trial(p, seed).survived_to_horizon for seed in range(2000))
    assert extinct > 1000


def test_trial_params_validation():
    with pytest.raises(ParameterError):
        TrialParams(rho=1, lam=-1)
    with pytest.raises(ParameterError):
        TrialParams(rho=1, variant="delayed")
    with pytest.raises(ParameterError):
        TrialParams(rho=1, horizon=2e6)
    assert TrialParams(rho=1, lam="inf").lam == math.inf


def test_evolve_range_errors():
    p = TrialParams(rho=1, lam=0.0, d=1, L=5, horizon=5)
    s = evolve(SimState(p, 0), 2.0)
    with pytest.raises(RangeError):
        evolve(s, 1.0)
    with pytest.raises(RangeError):
        evolve(s, 6.0)


# -- trajectories and traces -----------------------------------------------------------

def test_trajectory_steps_are_unit():
    p = TrialParams(rho=1, lam=0.5, d=2, L=7, horizon=20)
    s = SimState(p, 5)
    for tr in s.trace_universe(20.0):
        assert np.all(np.diff(tr.path.times) > 0)
        assert np.all(np.abs(np.diff(tr.path.sites, axis=0)).sum(axis=1) == 1)


def test_trajectory_rejects_bad_times():
    with pytest.raises(ParameterError):
        Trajectory([1.0, 0.5], [[0], [1]])


def test_record_trace_empty_and_stationary():
    p = TrialParams(rho=1, lam=0.0, d=1, L=11, horizon=10)
    s = SimState.from_particles(p, 0, [[3]], [True])
    s.enable_recording(0.0)
    assert len(record_trace(s, SpaceTimeBox((-2,), (2,), 0.0, 1.0))) == 0
    tr = s.trace_universe(10.0).traces[0].path
    t_first = tr.times[1]
    one = record_trace(s, SpaceTimeBox((3,), (3,), 0.0, t_first / 2))
    assert len(one) == 1 and len(one.traces[0].path.times) == 1


def test_record_trace_errors():
    p = TrialParams(rho=1, lam=0.0, d=1, L=11, horizon=10)
    s = SimState(p, 0)
    with pytest.raises(PreconditionError):
        record_trace(s, SpaceTimeBox((0,), (1,), 0.0, 1.0))
    s.enable_recording()
    with pytest.raises(RangeError):
        record_trace(s, SpaceTimeBox((-1000,), (0,), 0.0, 1.0))


def test_trace_replay_reproduces_occupancy():
    p = TrialParams(rho=2, lam=0.5, d=2, L=7, horizon=6)
    for seed in range(5):
        s = SimState(p, seed)
        s.enable_recording(0.0)
        dom = s.domain
        lo, hi = (dom.region_lo,) * 2, (dom.region_hi,) * 2
        trace = record_trace(s, SpaceTimeBox(lo, hi, 0.0, 6.0))
        evolve(s, 6.0)
        replay = Counter(tuple(tr.path.sites[-1]) for tr in trace)
        assert replay == site_table(s)[0]


def test_trace_restrict():
    p = TrialParams(rho=2, lam=0.5, d=1, L=11, horizon=10)
    s = SimState(p, 3)
    u = s.trace_universe(10.0)
    sub = u.restrict(((-2,), (2,)), 4.0, 6.0)
    at4 = [tr.path.position_at(4.0)[0] for tr in u]
    assert len(sub) == sum(-2 <= x <= 2 for x in at4)
    with pytest.raises(PreconditionError):
        u.restrict(((-2,), (2,)), 4.0, 11.0)
