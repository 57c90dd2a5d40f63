"""Monte Carlo orchestration: survival estimates, sweeps and the thinning check.

Replica ``r`` of every experiment uses the master seed ``derive_seed(master_seed, r)``
at every grid point, so grid points are paired: a density ladder shares its
lower clouds and a recovery grid shares particles and marks.
"""
from __future__ import annotations

import io
import math
import os
import platform
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import combinations

import numpy as np
from scipy import stats

from .cell_events import sample_point_counts
from .dynamics import CONTACT, TrialParams, parse_lambda, run_trial
from .errors import EstimationError, ParameterError
from .model import check_rho
from .rng import derive_seed
from .stats import Estimate
from .tessellation import TessellationParams

__version__ = "0.1.0"

CSV_COLUMNS = ("rho", "lambda", "variant", "d", "L", "horizon", "n", "p_survive", "ci_low", "ci_high",
               "p_local_given_survive", "ci_low2", "ci_high2", "flagged")


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment; ``rho`` and ``lam`` are grids (a single point is a 1-tuple)."""

    rho: tuple = (1.0,)
    lam: tuple = (math.inf,)
    d: int = 1
    L: int = 11
    variant: str = CONTACT
    horizon: float = 100.0
    replicas: int = 100
    master_seed: int = 0
    K_visits: int = 5
    boundary: str = "halo"
    halo_margin: int | None = None
    strict_boundary: bool = False
    tessellation: TessellationParams | None = None
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        rho = tuple(float(r) for r in np.atleast_1d(self.rho))
        lam = tuple(parse_lambda(v) for v in (self.lam if isinstance(self.lam, (tuple, list)) else (self.lam,)))
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "lam", lam)
        if not rho or not lam:
            raise ParameterError("grids must be non-empty")
        for r in rho:
            check_rho(r)
        if self.replicas < 1 or not self.horizon > 0 or self.K_visits < 1:
            raise ParameterError("need replicas >= 1, horizon > 0 and K_visits >= 1")
        # validates d, L, variant and boundary
        self.trial(rho[0], lam[0])

    def ladder(self, rho: float) -> tuple:
        """Cloud densities of ``rho``: increments of the sorted density grid up to ``rho``."""
        steps = sorted(set(r for r in self.rho if r <= rho))
        return tuple(b - a for a, b in zip([0.0] + steps[:-1], steps))

    def trial(self, rho: float, lam: float) -> TrialParams:
        layers = self.ladder(rho) if rho in self.rho else None
        return TrialParams(rho, lam=lam, d=self.d, L=self.L, horizon=self.horizon, variant=self.variant,
                           boundary=self.boundary, halo_margin=self.halo_margin,
                           layers=layers if layers and len(layers) > 1 else None)

    def manifest(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            if k in ("tessellation", "constants"):
                continue
            out[k] = ",".join(_fmt(x) for x in v) if isinstance(v, tuple) else _fmt(v)
        if self.tessellation is not None:
            for k, v in asdict(self.tessellation).items():
                out[f"tessellation.{k}"] = _fmt(v)
        for k in sorted(self.constants):
            out[f"constant.{k}"] = _fmt(self.constants[k])
        return out


def _fmt(v) -> str:
    if isinstance(v, bool) or v is None:
        return str(v)
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


def environment() -> dict:
    import numba
    import scipy
    return {"version.latticefire": __version__, "version.python": platform.python_version(),
            "version.numpy": np.__version__, "version.numba": numba.__version__, "version.scipy": scipy.__version__}


def manifest_text(entries: dict) -> str:
    return "".join(f"{k}={v}\n" for k, v in entries.items())


# -- replicas ------------------------------------------------------------------------

@dataclass(frozen=True)
class ReplicaResult:
    survived: bool
    visits: int
    contaminated: bool
    extinct_at: float | None
    n_events: int


def run_replica(params: TrialParams, master_seed: int, r: int) -> ReplicaResult:
    out = run_trial(params, derive_seed(master_seed, r))
    return ReplicaResult(out.survived_to_horizon, len(out.origin_infected_intervals),
                         out.boundary_contaminated, out.extinct_at, out.n_events)


def _replica_task(args):
    return run_replica(*args)


def worker_count() -> int:
    cap = os.environ.get("LATTICEFIRE_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ParameterError(f"LATTICEFIRE_THREADS must be an integer, got {cap!r}")
    return n


def run_replicas(params: TrialParams, master_seed: int, n: int, workers: int | None = None) -> list[ReplicaResult]:
    """Replicas ``0 .. n-1`` in seed order, whatever order the workers finish in."""
    workers = worker_count() if workers is None else workers
    tasks = [(params, master_seed, r) for r in range(n)]
    if workers <= 1 or n < 2 * workers:
        return [_replica_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_replica_task, tasks, chunksize=max(1, n // (8 * workers))))


# -- estimators ----------------------------------------------------------------------

def _usable(spec: ExperimentSpec, results: list[ReplicaResult]) -> tuple[list[ReplicaResult], int]:
    flagged = sum(r.contaminated for r in results)
    if flagged and not spec.strict_boundary:
        warnings.warn(f"{flagged} of {len(results)} replicas reached the halo shell", stacklevel=3)
    kept = [r for r in results if not (spec.strict_boundary and r.contaminated)]
    return kept, flagged


def survival_estimate(spec: ExperimentSpec, results: list[ReplicaResult]) -> Estimate:
    kept, flagged = _usable(spec, results)
    if not kept:
        raise EstimationError("no replicas left after excluding contaminated ones")
    return Estimate.from_counts(sum(r.survived for r in kept), len(kept), flagged)


def local_survival_estimate(spec: ExperimentSpec, results: list[ReplicaResult]) -> Estimate | None:
    """Fraction of surviving replicas with at least ``K_visits`` origin infection intervals; None without survivors."""
    kept, flagged = _usable(spec, results)
    alive = [r for r in kept if r.survived]
    if not alive:
        return None
    return Estimate.from_counts(sum(r.visits >= spec.K_visits for r in alive), len(alive), flagged)


def _single(spec: ExperimentSpec) -> TrialParams:
    if len(spec.rho) != 1 or len(spec.lam) != 1:
        raise ParameterError("a single-point estimate needs one rho and one lambda")
    return spec.trial(spec.rho[0], spec.lam[0])


def estimate_survival(spec: ExperimentSpec, workers: int | None = None) -> Estimate:
    return survival_estimate(spec, run_replicas(_single(spec), spec.master_seed, spec.replicas, workers))


def estimate_local_survival(spec: ExperimentSpec, workers: int | None = None) -> Estimate | None:
    return local_survival_estimate(spec, run_replicas(_single(spec), spec.master_seed, spec.replicas, workers))


@dataclass
class SweepRow:
    rho: float
    lam: float
    survival: Estimate | None
    local: Estimate | None
    results: list = field(default_factory=list, repr=False)
    error: str | None = None

    def csv_fields(self, spec: ExperimentSpec) -> list[str]:
        def est(e):
            return ["nan"] * 3 if e is None else [f"{e.p_hat:.10g}", f"{e.ci_low:.10g}", f"{e.ci_high:.10g}"]
        n = self.survival.n if self.survival else 0
        flagged = self.survival.flagged if self.survival else 0
        return ([_fmt(self.rho), _fmt(self.lam), spec.variant, str(spec.d), str(spec.L), _fmt(spec.horizon), str(n)]
                + est(self.survival) + est(self.local) + [str(flagged)])


def sweep(spec: ExperimentSpec, workers: int | None = None) -> list[SweepRow]:
    """One row per (rho, lambda) grid point, rho-major in the given order; failures stay in-row."""
    rows = []
    for rho in spec.rho:
        for lam in spec.lam:
            try:
                res = run_replicas(spec.trial(rho, lam), spec.master_seed, spec.replicas, workers)
                rows.append(SweepRow(rho, lam, survival_estimate(spec, res), local_survival_estimate(spec, res), res))
            except (EstimationError, ParameterError) as exc:
                rows.append(SweepRow(rho, lam, None, None, error=f"{type(exc).__name__}: {exc}"))
    return rows


def sweep_csv(spec: ExperimentSpec, rows: list[SweepRow]) -> str:
    lines = [",".join(CSV_COLUMNS)] + [",".join(r.csv_fields(spec)) for r in rows]
    return "\n".join(lines) + "\n"


def sweep_manifest(spec: ExperimentSpec, rows: list[SweepRow]) -> dict:
    out = {"command": "sweep", **spec.manifest(), **environment()}
    for k, r in enumerate(rows):
        if r.error:
            out[f"error.row{k}"] = r.error
    return out


# -- thinning ------------------------------------------------------------------------

@dataclass
class FitResult:
    name: str
    mean: float
    expected_mean: float
    chi2: float
    dof: int
    p_value: float


@dataclass
class ThinningReport:
    rho: float
    d: int
    samples: int
    seed: int
    fits: list
    correlations: list     # (name_a, name_b, r, z)
    alpha: float = 0.01
    z_max: float = 3.0

    @property
    def fits_ok(self) -> bool:
        return all(f.p_value > self.alpha for f in self.fits)

    @property
    def independence_ok(self) -> bool:
        return all(abs(z) <= self.z_max for *_, z in self.correlations)

    @property
    def passed(self) -> bool:
        return self.fits_ok and self.independence_ok

    def text(self) -> str:
        buf = io.StringIO()
        buf.write(f"thinning rho={_fmt(self.rho)} d={self.d} samples={self.samples} seed={self.seed}\n")
        for f in self.fits:
            buf.write(f"fit {f.name} mean={f.mean:.6f} expected={f.expected_mean:.6f} "
                      f"chi2={f.chi2:.4f} dof={f.dof} p={f.p_value:.4g}\n")
        for a, b, r, z in self.correlations:
            buf.write(f"corr {a} {b} r={r:.6f} z={z:.3f}\n")
        buf.write(("PASS" if self.passed else "FAIL") + "\n")
        return buf.getvalue()


def poisson_chisquare(x: np.ndarray, mean: float, min_expected: float = 5.0) -> tuple[float, int, float]:
    """Pearson goodness of fit to Poisson(``mean``); adjacent cells are pooled until each expects ``min_expected``."""
    n = len(x)
    kmax = max(int(x.max()), int(mean + 10 * math.sqrt(mean) + 10))
    p = np.append(stats.poisson.pmf(np.arange(kmax), mean), stats.poisson.sf(kmax - 1, mean))
    obs = np.bincount(np.minimum(x, kmax), minlength=kmax + 1)
    cells_o, cells_e = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(obs, p * n):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            cells_o.append(acc_o)
            cells_e.append(acc_e)
            acc_o = acc_e = 0.0
    if cells_e:
        cells_o[-1] += acc_o
        cells_e[-1] += acc_e
    if len(cells_e) < 2:
        return 0.0, 0, 1.0
    o, e = np.array(cells_o), np.array(cells_e)
    chi2 = float(((o - e) ** 2 / e).sum())
    dof = len(o) - 1
    return chi2, dof, float(stats.chi2.sf(chi2, dof))


def verify_thinning(rho: float, d: int, samples: int, seed: int, k: int = 1) -> ThinningReport:
    """Fit each transit count at ``(0, k)`` to its Poisson law and test pairwise correlations.

    Every sample comes from an independent run, so samples are i.i.d.
    """
    check_rho(rho)
    if samples < 10_000:
        raise ParameterError("the thinning check needs at least 10^4 samples")
    counts = sample_point_counts(rho, d, samples, seed, k)
    names = [f"N{'+' if s > 0 else '-'}e{a + 1}" for a in range(d) for s in (1, -1)] + ["N0"]
    means = [(1 - math.exp(-1)) * rho / (2 * d)] * (2 * d) + [math.exp(-1) * rho]
    fits = []
    for j, (name, mu) in enumerate(zip(names, means)):
        chi2, dof, p = poisson_chisquare(counts[:, j], mu)
        fits.append(FitResult(name, float(counts[:, j].mean()), mu, chi2, dof, p))
    corr = []
    for a, b in combinations(range(len(names)), 2):
        r = float(np.corrcoef(counts[:, a], counts[:, b])[0, 1])
        corr.append((names[a], names[b], r, r * math.sqrt(samples)))
    return ThinningReport(float(rho), d, samples, seed, fits, corr)


def thinning_manifest(report: ThinningReport) -> dict:
    return {"command": "verify-thinning", "rho": _fmt(report.rho), "d": str(report.d),
            "samples": str(report.samples), "seed": str(report.seed), "k": "1", **environment()}
