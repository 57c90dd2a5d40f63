"""Binomial estimates with Wilson score intervals."""
from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.stats import norm

from .errors import EstimationError

Z95 = float(norm.ppf(0.975))


def wilson_interval(successes: int, n: int, z: float = Z95) -> tuple[float, float]:
    if n <= 0:
        raise EstimationError("Wilson interval needs at least one trial")
    if not 0 <= successes <= n:
        raise EstimationError(f"{successes} successes out of {n}")
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = max(0.0, centre - half)
    hi = min(1.0, centre + half)
    # guard against rounding at the endpoints
    return min(lo, p), max(hi, p)


@dataclass(frozen=True)
class Estimate:
    p_hat: float
    n: int
    ci_low: float
    ci_high: float
    flagged: int = 0
    successes: int = 0

    def __post_init__(self):
        if not (0 <= self.ci_low <= self.p_hat <= self.ci_high <= 1):
            raise EstimationError(f"inconsistent estimate {self}")

    @classmethod
    def from_counts(cls, successes: int, n: int, flagged: int = 0) -> "Estimate":
        lo, hi = wilson_interval(successes, n)
        return cls(successes / n, n, lo, hi, flagged, successes)

    @property
    def std_error(self) -> float:
        return math.sqrt(self.p_hat * (1 - self.p_hat) / self.n)
