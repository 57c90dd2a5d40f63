"""Lattice geometry, particle labels and initial conditions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numba as nb
import numpy as np

from .errors import ComparisonError, ParameterError
from .rng import Purpose, RngStream, draw_uniform, make_stream, poisson_inverse, stream_id

HALO = "halo"
PERIODIC = "periodic"


@dataclass(frozen=True)
class LatticeDomain:
    """Finite window of Z^d centred at the origin.

    In halo mode the simulated region is the inner box of side ``L`` padded by
    ``halo_margin`` sites on every side; walkers still move on all of Z^d.  In
    periodic mode the inner box is a torus.
    """

    d: int
    L: int
    boundary: str = HALO
    halo_margin: int = 0

    def __post_init__(self):
        if self.d < 1 or self.L < 1 or self.halo_margin < 0:
            raise ParameterError(f"invalid domain {self}")
        if self.boundary not in (HALO, PERIODIC):
            raise ParameterError(f"unknown boundary {self.boundary!r}")

    @classmethod
    def for_horizon(cls, d: int, L: int, horizon: float, boundary: str = HALO) -> "LatticeDomain":
        margin = int(math.ceil(4 * horizon)) if boundary == HALO else 0
        return cls(d, L, boundary, margin)

    @property
    def inner_lo(self) -> int:
        return -(self.L // 2)

    @property
    def inner_hi(self) -> int:
        return self.inner_lo + self.L - 1

    @property
    def margin(self) -> int:
        return self.halo_margin if self.boundary == HALO else 0

    @property
    def region_lo(self) -> int:
        return self.inner_lo - self.margin

    @property
    def region_hi(self) -> int:
        return self.inner_hi + self.margin

    @property
    def region_side(self) -> int:
        return self.L + 2 * self.margin

    @property
    def periodic(self) -> bool:
        return self.boundary == PERIODIC

    def region_sites(self) -> np.ndarray:
        """All sites of the simulated region, shape (n, d), C order."""
        axis = np.arange(self.region_lo, self.region_hi + 1, dtype=np.int64)
        grids = np.meshgrid(*([axis] * self.d), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def in_inner(self, site) -> bool:
        return all(self.inner_lo <= c <= self.inner_hi for c in site)


@dataclass(frozen=True, order=True)
class ParticleId:
    """Label ``(origin, index)`` of the ``index``-th particle started at ``origin``.

    ``cloud`` separates independently superposed populations (cloud 0 is the
    base population, higher clouds are the extra density of a coupling).
    """

    cloud: int
    origin: tuple
    index: int

    def key(self) -> tuple:
        return (self.cloud, *self.origin, self.index)


@dataclass
class Configuration:
    counts: dict = field(default_factory=dict)
    infected: dict = field(default_factory=dict)
    time: float = 0.0
    domain: LatticeDomain | None = None

    def __post_init__(self):
        for x, k in self.infected.items():
            if k < 0 or k > self.counts.get(x, 0):
                raise ParameterError(f"infected({x})={k} exceeds counts")

    def total(self) -> int:
        return sum(self.counts.values())

    def total_infected(self) -> int:
        return sum(self.infected.values())

    def count(self, x) -> int:
        return self.counts.get(tuple(x), 0)


@nb.njit(cache=True)
def _site_counts(seed, cloud, sites, rho):
    n = sites.shape[0]
    out = np.empty(n, np.int64)
    key = np.empty(sites.shape[1] + 1, np.int64)
    key[0] = cloud
    for s in range(n):
        key[1:] = sites[s]
        sid = stream_id(seed, 3, key)
        out[s] = poisson_inverse(rho, draw_uniform(sid, 0))
    return out


def _seed_and_cloud(seed) -> tuple[int, int]:
    if isinstance(seed, RngStream):
        cloud = int(seed.key[0]) if seed.key else 0
        return int(seed.master_seed), cloud
    return int(seed), 0


def sample_layer_counts(rho: float, domain: LatticeDomain, master_seed: int, cloud: int) -> np.ndarray:
    """Independent Poisson(rho) counts over the region sites for one cloud."""
    sites = domain.region_sites()
    return _site_counts(np.uint64(master_seed & ((1 << 64) - 1)), cloud, sites, float(rho))


def check_rho(rho: float, allow_zero: bool = False) -> float:
    rho = float(rho)
    if not math.isfinite(rho) or rho < 0 or (rho == 0 and not allow_zero):
        raise ParameterError(f"density must be finite and positive, got {rho}")
    return rho


def sample_initial_configuration(rho: float, domain: LatticeDomain, seed=0,
                                 add_origin_particle: bool = True) -> Configuration:
    """Poisson(rho) occupation of the region plus one infected particle at the origin.

    All particles at the origin are infected; everything else is healthy.
    ``seed`` is an integer master seed or an ``INITIAL`` stream whose key
    holds the cloud number.
    """
    rho = check_rho(rho)
    master, cloud = _seed_and_cloud(seed)
    counts_arr = sample_layer_counts(rho, domain, master, cloud)
    sites = domain.region_sites()
    counts = {tuple(int(c) for c in s): int(k) for s, k in zip(sites, counts_arr) if k}
    origin = (0,) * domain.d
    if add_origin_particle:
        counts[origin] = counts.get(origin, 0) + 1
    infected = {origin: counts[origin]} if counts.get(origin, 0) else {}
    return Configuration(counts, infected, 0.0, domain)


def initial_stream(master_seed: int, cloud: int = 0) -> RngStream:
    return make_stream(master_seed, Purpose.INITIAL, (cloud,))


def dominance_check(a: Configuration, b: Configuration) -> bool:
    """True iff ``a.counts(x) <= b.counts(x)`` at every site."""
    if a.time != b.time:
        raise ComparisonError(f"times differ: {a.time} vs {b.time}")
    if a.domain is not None and b.domain is not None and a.domain != b.domain:
        raise ComparisonError("domains differ")
    return all(k <= b.counts.get(x, 0) for x, k in a.counts.items())


def particle_ids_from_counts(sites: np.ndarray, counts: np.ndarray, cloud: int) -> Iterable[ParticleId]:
    for s, k in zip(sites, counts):
        origin = tuple(int(c) for c in s)
        for n in range(1, int(k) + 1):
            yield ParticleId(cloud, origin, n)
