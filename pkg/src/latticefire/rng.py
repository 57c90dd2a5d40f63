"""Keyed, counter-based random streams.

Every random quantity in a run is addressed by ``(master_seed, purpose, key)``
plus a draw counter, and evaluated as a hash of those integers.  Two
simulations that share a key therefore share the draws exactly (this is what
makes the couplings pathwise), and a stream can be jumped to any position in
O(1).  The mixer is the SplitMix64 finalizer, which is a bijection on 64-bit
words with full avalanche.

The hashing functions are numba-compiled so the event kernel can call them
inline; they are equally usable from Python.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

_U = np.uint64
_GOLDEN = _U(0x9E3779B97F4A7C15)
_M1 = _U(0xBF58476D1CE4E5B9)
_M2 = _U(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0
_HALF53 = 0.5 / 9007199254740992.0
_MASK64 = (1 << 64) - 1


class Purpose(enum.IntEnum):
    WALK = 1
    RECOVERY = 2
    INITIAL = 3
    DISTINGUISHED = 4


@nb.njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> _U(30))) * _M1
    z = (z ^ (z >> _U(27))) * _M2
    return z ^ (z >> _U(31))


@nb.njit(cache=True, inline="always")
def _zigzag(c):
    # maps ..., -2, -1, 0, 1, 2, ... onto 3, 1, 0, 2, 4, ...
    if c >= 0:
        return _U(c) << _U(1)
    return (_U(-(c + 1)) << _U(1)) | _U(1)


@nb.njit(cache=True)
def stream_id(seed, purpose, key):
    """Hash ``(seed, purpose, key...)`` into a 64-bit stream identifier."""
    h = mix64(_U(seed) + _GOLDEN)
    h = mix64(h ^ (_U(purpose) * _GOLDEN))
    h = mix64(h + _U(key.shape[0]))
    for j in range(key.shape[0]):
        h = mix64(h ^ mix64(_zigzag(key[j]) + _GOLDEN))
    return h


@nb.njit(cache=True, inline="always")
def draw_bits(sid, i):
    return mix64(sid ^ mix64(_U(i) + _GOLDEN))


@nb.njit(cache=True, inline="always")
def draw_uniform(sid, i):
    """The ``i``-th uniform of stream ``sid``, strictly inside (0, 1)."""
    return float(draw_bits(sid, i) >> _U(11)) * _INV53 + _HALF53


@nb.njit(cache=True, inline="always")
def draw_exponential(sid, i):
    return -math.log(draw_uniform(sid, i))


@nb.njit(cache=True)
def poisson_inverse(mean, u):
    """Poisson(mean) quantile at ``u`` by sequential CDF search."""
    if mean <= 0.0:
        return 0
    if mean > 500.0:
        # normal approximation with continuity correction; never hit by the
        # densities this package is meant for
        k = int(math.floor(mean + math.sqrt(mean) * _ndtri(u) + 0.5))
        return max(k, 0)
    p = math.exp(-mean)
    cdf = p
    k = 0
    while u > cdf:
        k += 1
        p *= mean / k
        cdf += p
        if p < 1e-300 and k > mean:
            break
    return k


@nb.njit(cache=True)
def _ndtri(u):
    # Acklam's rational approximation; adequate for the large-mean fallback
    a = (-39.69683028665376, 220.9460984245205, -275.9285104469687,
         138.3577518672690, -30.66479806614716, 2.506628277459239)
    b = (-54.47609879822406, 161.5858368580409, -155.6989798598866,
         66.80131188771972, -13.28068155288572)
    c = (-7.784894002430293e-03, -0.3223964580411365, -2.400758277161838,
         -2.549732539343734, 4.374664141464968, 2.938163982698783)
    dd = (7.784695709041462e-03, 0.3224671290700398, 2.445134137142996,
          3.754408661907416)
    if u < 0.02425:
        q = math.sqrt(-2 * math.log(u))
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1)
    if u > 1 - 0.02425:
        q = math.sqrt(-2 * math.log(1 - u))
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1)
    q = u - 0.5
    r = q * q
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1)


@nb.njit(cache=True)
def _uniform_block(sid, start, n):
    out = np.empty(n, np.float64)
    for j in range(n):
        out[j] = draw_uniform(sid, start + j)
    return out


def _key_array(key) -> np.ndarray:
    flat: list[int] = []
    for part in key:
        if isinstance(part, (tuple, list, np.ndarray)):
            flat.extend(int(v) for v in part)
        else:
            flat.append(int(part))
    return np.asarray(flat, dtype=np.int64)


@dataclass(frozen=True)
class RngStream:
    """A reproducible stream addressed by ``(master_seed, purpose, key)``.

    ``key`` may nest tuples (e.g. a particle id ``((x1, x2), n)``); it is
    flattened before hashing.  Draws are indexed, so ``uniforms(5, start=10)``
    returns draws 10..14 regardless of what was read before.
    """

    master_seed: int
    purpose: Purpose
    key: tuple = ()
    sid: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        seed = int(self.master_seed) & _MASK64
        sid = stream_id(_U(seed), int(self.purpose), _key_array(self.key))
        object.__setattr__(self, "sid", int(sid))

    def uniform(self, i: int) -> float:
        return float(draw_uniform(_U(self.sid), i))

    def uniforms(self, n: int, start: int = 0) -> np.ndarray:
        return _uniform_block(_U(self.sid), start, n)

    def exponentials(self, n: int, start: int = 0, rate: float = 1.0) -> np.ndarray:
        return -np.log(self.uniforms(n, start)) / rate

    def child(self, *extra) -> "RngStream":
        """Stream with the same seed and purpose and ``extra`` appended to the key."""
        return RngStream(self.master_seed, self.purpose, tuple(self.key) + tuple(extra))


def make_stream(master_seed: int, purpose: Purpose | str, key=()) -> RngStream:
    if isinstance(purpose, str):
        purpose = Purpose[purpose.upper().replace("-", "_").replace("DISTINGUISHED_PATH", "DISTINGUISHED")]
    return RngStream(int(master_seed), Purpose(purpose), tuple(key))


def derive_seed(master_seed: int, *labels: int) -> int:
    """Sub-seed for replica/grid bookkeeping; stable across platforms."""
    sid = stream_id(_U(int(master_seed) & _MASK64), 0, _key_array(labels))
    return int(sid >> _U(1))
