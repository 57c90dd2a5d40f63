"""Pathwise couplings between runs that share walk and mark streams.

Two runs share randomness simply by sharing particle labels: every stream is
keyed by ``ParticleId``, so a particle present in both runs follows the same
path and sees the same recovery marks in each.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernel as K
from .dynamics import InvariantViolation, SimState, TrialParams
from .errors import ParameterError, RangeError

DENSITY = "density"
RECOVERY = "recovery"


class CouplingViolation(InvariantViolation):
    """Dominance or containment failed inside a coupled pair."""


@dataclass
class CoupledPair:
    """Two runs advanced through one merged event stream.

    ``low`` is the dominated run: the lower density for ``density`` pairs,
    the instantaneous-recovery run for ``recovery`` pairs.  ``index_map[p]``
    is the index in ``high`` of particle ``p`` of ``low``.
    """

    low: SimState
    high: SimState
    shared_seed: int
    kind: str
    parameters: tuple
    index_map: np.ndarray
    checks: int = 0

    @property
    def time(self) -> float:
        return min(self.low.time, self.high.time)

    def low_survived(self) -> bool:
        return self.low.n_infected > 0

    def high_survived(self) -> bool:
        return self.high.n_infected > 0

    def survival_implication_holds(self) -> bool:
        """Survival of the dominated run must imply survival of the other."""
        return (not self.low_survived()) or self.high_survived()

    def dominance_holds(self) -> bool:
        """Occupation dominance (density pairs) and infected-set containment, checked now."""
        lo, hi = self.low.core, self.high.core
        v = K.pair_violation(lo.pos, lo.pi, lo.grid, hi.pos, hi.pi, hi.grid, hi.geo,
                             self.index_map, self.kind == DENSITY)
        return v == 0


def advance_pair(pair: CoupledPair, t_end: float) -> CoupledPair:
    """Advance both runs to ``t_end``, checking the pair at every event time."""
    if t_end < pair.time:
        raise RangeError(f"t_end={t_end} precedes the pair time {pair.time}")
    stats = np.zeros(1, np.int64)
    check_counts = pair.kind == DENSITY
    while True:
        status, which = K.coupled_advance(*pair.low.core, *pair.high.core, pair.index_map,
                                          check_counts, float(t_end), stats)
        if status == K.OK:
            break
        if status == K.VIOLATION and which == 0 and pair.low.core.si[K.SI_VIOLATION] in (K.V_DOMINANCE, K.V_CONTAINMENT):
            core = pair.low.core
            raise CouplingViolation(int(core.si[K.SI_VIOLATION]), float(core.sc[K.SC_VIOLATION_T]))
        state = pair.low if which == 0 else pair.high
        state.handle_status(status)
    pair.checks += int(stats[0])
    return pair


def _start(pair: CoupledPair, horizon: float) -> CoupledPair:
    if not pair.dominance_holds():
        raise CouplingViolation(K.V_DOMINANCE, 0.0)
    return advance_pair(pair, horizon)


def coupled_density_run(rho: float, rho_prime: float, seed: int, horizon: float, *,
                        lam: float = math.inf, d: int = 1, L: int = 11, variant: str = "contact",
                        halo_margin: int | None = None, check_mode: int = 0,
                        run: bool = True) -> CoupledPair:
    """Runs at densities ``rho <= rho_prime`` sharing the density-``rho`` particles.

    The high run adds an independently keyed Poisson(``rho_prime - rho``)
    cloud, so the low cloud's streams are identical in both runs.
    """
    if not (rho > 0 and math.isfinite(rho_prime)):
        raise ParameterError("densities must be positive and finite")
    if rho > rho_prime:
        raise ParameterError(f"rho={rho} exceeds rho_prime={rho_prime}")
    common = dict(lam=lam, d=d, L=L, horizon=horizon, variant=variant, halo_margin=halo_margin)
    low = SimState(TrialParams(rho, layers=(rho,), **common), seed, check_mode=check_mode)
    high = SimState(TrialParams(rho_prime, layers=(rho, rho_prime - rho), **common), seed,
                    check_mode=check_mode)
    # clouds are stored in order, so the low particles are a prefix of the high ones
    index_map = np.arange(low.n, dtype=np.int64)
    pair = CoupledPair(low, high, int(seed), DENSITY, (rho, rho_prime), index_map)
    return _start(pair, horizon) if run else pair


def coupled_recovery_run(rho: float, lam: float, seed: int, horizon: float, *,
                         d: int = 1, L: int = 11, variant: str = "contact",
                         halo_margin: int | None = None, check_mode: int = 0,
                         run: bool = True) -> CoupledPair:
    """Runs with recovery rate ``lam`` and with instantaneous recovery, same particles and marks.

    The instantaneous run ignores the marks; ``low`` is that run.
    """
    if not (0 < lam < math.inf):
        raise ParameterError(f"recovery rate must be positive and finite, got {lam}")
    common = dict(d=d, L=L, horizon=horizon, variant=variant, halo_margin=halo_margin)
    low = SimState(TrialParams(rho, lam=math.inf, **common), seed, check_mode=check_mode)
    high = SimState(TrialParams(rho, lam=lam, **common), seed, check_mode=check_mode)
    index_map = np.arange(low.n, dtype=np.int64)
    pair = CoupledPair(low, high, int(seed), RECOVERY, (lam, math.inf), index_map)
    return _start(pair, horizon) if run else pair
