import math
import warnings

import numpy as np
import pytest

from latticefire.dynamics import TrialParams, run_trial
from latticefire.errors import EstimationError, ParameterError
from latticefire.harness import (CSV_COLUMNS, ExperimentSpec, ReplicaResult, estimate_local_survival,
                                 estimate_survival, local_survival_estimate, poisson_chisquare,
                                 run_replicas, survival_estimate, sweep, sweep_csv, sweep_manifest, verify_thinning,
                                 worker_count)
from latticefire.rng import derive_seed
from latticefire.stats import Estimate, wilson_interval


# -- Wilson intervals ----------------------------------------------------------------

@pytest.mark.parametrize("p", [0.1, 0.5, 0.9])
def test_wilson_coverage(p):
    rng = np.random.default_rng(int(p * 10))
    n = 200
    hits = 0
    for k in rng.binomial(n, p, 10_000):
        lo, hi = wilson_interval(int(k), n)
        hits += lo <= p <= hi
    assert 0.93 <= hits / 10_000 <= 0.97


def test_wilson_edges():
    assert wilson_interval(0, 10)[0] == 0.0 and wilson_interval(10, 10)[1] == 1.0
    for k in range(11):
        lo, hi = wilson_interval(k, 10)
        assert 0 <= lo <= k / 10 <= hi <= 1
    with pytest.raises(EstimationError):
        wilson_interval(0, 0)
    with pytest.raises(EstimationError):
        wilson_interval(3, 2)


def test_estimate_consistency():
    e = Estimate.from_counts(7, 20, flagged=2)
    assert e.p_hat == 0.35 and e.n == 20 and e.flagged == 2 and e.ci_low <= 0.35 <= e.ci_high
    with pytest.raises(EstimationError):
        Estimate(0.5, 10, 0.6, 0.7)


# -- specs and estimators ------------------------------------------------------------

def test_spec_validation():
    for bad in [dict(rho=()), dict(replicas=0), dict(horizon=0), dict(rho=(-1.0,)), dict(lam=("x",)),
                dict(variant="other"), dict(K_visits=0)]:
        with pytest.raises((ParameterError, ValueError)):
            ExperimentSpec(**bad)
    assert ExperimentSpec(lam="inf").lam == (math.inf,)


def test_ladder():
    spec = ExperimentSpec(rho=(0.5, 1, 2, 4, 8))
    assert spec.ladder(4) == (0.5, 0.5, 1.0, 2.0)
    assert spec.trial(0.5, math.inf).layers is None
    assert spec.trial(8, math.inf).cloud_densities == (0.5, 0.5, 1.0, 2.0, 4.0)


def test_no_recovery_survives_exactly():
    spec = ExperimentSpec(rho=(1.0,), lam=(0.0,), horizon=10, replicas=30, L=7)
    assert estimate_survival(spec, workers=1).p_hat == 1.0


def test_replicas_use_derived_seeds():
    p = TrialParams(rho=1, lam=0.5, horizon=10, L=7)
    res = run_replicas(p, 5, 4, workers=1)
    for r, got in enumerate(res):
        out = run_trial(p, derive_seed(5, r))
        assert got.survived == out.survived_to_horizon and got.n_events == out.n_events


def test_parallel_equals_serial():
    p = TrialParams(rho=2, lam=0.5, horizon=10, L=7)
    assert run_replicas(p, 1, 24, workers=1) == run_replicas(p, 1, 24, workers=3)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("LATTICEFIRE_THREADS", "1")
    assert worker_count() == 1
    monkeypatch.setenv("LATTICEFIRE_THREADS", "lots")
    with pytest.raises(ParameterError):
        worker_count()


def test_local_survival_K1_is_one():
    spec = ExperimentSpec(rho=(2.0,), lam=(0.3,), horizon=20, replicas=40, K_visits=1, L=7)
    est = estimate_local_survival(spec, workers=1)
    assert est is None or est.p_hat == 1.0


def test_local_survival_without_survivors():
    spec = ExperimentSpec(rho=(1.0,), lam=(math.inf,), K_visits=1)
    dead = [ReplicaResult(False, 1, False, 0.5, 3)] * 5
    assert local_survival_estimate(spec, dead) is None


def test_contamination_handling():
    res = [ReplicaResult(True, 3, True, None, 10), ReplicaResult(False, 1, False, 1.0, 5)]
    with pytest.warns(UserWarning):
        e = survival_estimate(ExperimentSpec(), res)
    assert e.n == 2 and e.flagged == 1
    strict = ExperimentSpec(strict_boundary=True)
    assert survival_estimate(strict, res).n == 1
    with pytest.raises(EstimationError):
        survival_estimate(strict, res[:1])


def test_local_survival_recurrent_no_recovery():
    spec = ExperimentSpec(rho=(1.0,), lam=(0.0,), horizon=200, replicas=200, K_visits=5, L=11)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = estimate_local_survival(spec)
    assert est.p_hat > 0.9


def test_survival_ordering_under_coupled_ladder():
    spec = ExperimentSpec(rho=(1.0, 2.0), lam=(math.inf,), horizon=20, replicas=200, L=9)
    rows = sweep(spec, workers=1)
    low, high = rows[0].results, rows[1].results
    assert all(h.survived for l_, h in zip(low, high) if l_.survived)
    assert rows[0].survival.p_hat <= rows[1].survival.p_hat


def test_one_point_sweep_matches_estimate():
    spec = ExperimentSpec(rho=(2.0,), lam=(0.5,), horizon=10, replicas=30, L=7)
    row = sweep(spec, workers=1)[0]
    assert row.survival == estimate_survival(spec, workers=1)


def test_sweep_rows_and_csv():
    spec = ExperimentSpec(rho=(1.0, 2.0), lam=(0.1, math.inf), horizon=5, replicas=10, L=5, master_seed=3)
    rows = sweep(spec, workers=1)
    assert [(r.rho, r.lam) for r in rows] == [(1.0, 0.1), (1.0, math.inf), (2.0, 0.1), (2.0, math.inf)]
    text = sweep_csv(spec, rows)
    lines = text.splitlines()
    assert lines[0].split(",") == list(CSV_COLUMNS) and len(lines) == 5
    assert lines[2].startswith("1.0,inf,contact,1,5,5,10,")
    assert text == sweep_csv(spec, sweep(spec, workers=2))
    man = sweep_manifest(spec, rows)
    assert man["rho"] == "1.0,2.0" and man["master_seed"] == "3" and "version.numpy" in man


def test_sweep_records_errors_in_row():
    # no recovery on a tiny domain: every replica reaches the halo shell
    spec = ExperimentSpec(rho=(4.0,), lam=(0.0,), horizon=50, replicas=4, L=3, strict_boundary=True,
                          halo_margin=0)
    rows = sweep(spec, workers=1)
    assert rows[0].error and "EstimationError" in rows[0].error
    assert sweep_csv(spec, rows).splitlines()[1].endswith("nan,nan,nan,nan,nan,nan,0")
    assert "error.row0" in sweep_manifest(spec, rows)


# -- thinning ------------------------------------------------------------------------

def test_poisson_chisquare_accepts_poisson_rejects_other():
    rng = np.random.default_rng(0)
    assert poisson_chisquare(rng.poisson(1.3, 50_000), 1.3)[2] > 0.01
    assert poisson_chisquare(rng.binomial(4, 0.325, 50_000), 1.3)[2] < 1e-6
    assert poisson_chisquare(np.zeros(100, int), 1e-6) == (0.0, 0, 1.0)


def test_thinning_examples():
    rep = verify_thinning(2.0, 1, 20_000, 4)
    fits = {f.name: f for f in rep.fits}
    assert set(fits) == {"N+e1", "N-e1", "N0"}
    assert fits["N0"].expected_mean == pytest.approx(2 * math.exp(-1))
    assert fits["N+e1"].expected_mean == pytest.approx(1 - math.exp(-1))
    assert rep.passed and rep.text().endswith("PASS\n")
    rep2 = verify_thinning(1.0, 2, 10_000, 4)
    assert [f.name for f in rep2.fits] == ["N+e1", "N-e1", "N+e2", "N-e2", "N0"]
    assert rep2.fits[0].expected_mean == pytest.approx((1 - math.exp(-1)) / 4)
    assert len(rep2.correlations) == 10


def test_thinning_needs_samples():
    with pytest.raises(ParameterError):
        verify_thinning(2.0, 1, 9_999, 0)
