"""Deterministic seeded randomness: splitmix64, Box-Muller, FNV-1a hashing.

Every stochastic choice in the package flows through this module so that
independent implementations can reproduce streams bit for bit:

* u64 stream: splitmix64 (state += 0x9E3779B97F4A7C15; xorshift-multiply mix).
* uniforms:   u = (x >> 11) * 2^-53, in [0, 1).
* gaussians:  Box-Muller on pairs (u1 in (0,1], u2 in [0,1)):
              u1 = ((a >> 11) + 1) * 2^-53, u2 = (b >> 11) * 2^-53,
              z0 = sqrt(-2 ln u1) * cos(2 pi u2), z1 = ... sin(...); z0 first.
* seed trees: child = splitmix64(seed XOR fnv1a64(label)) first output.
"""

import math

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

_TWO_POW_NEG53 = 2.0 ** -53


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK
    return h


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def derive_seed(seed: int, label: str) -> int:
    """Deterministic child seed for a named stream."""
    return SplitMix64(seed ^ fnv1a64(label.encode("utf-8"))).next_u64()


class SplitMix64:
    """splitmix64 u64 stream with uniform/gaussian views."""

    def __init__(self, seed: int):
        self._state = seed & _MASK
        self._spare = None  # pending second Box-Muller output

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        return _mix(self._state)

    def u64_block(self, count: int) -> np.ndarray:
        """Vectorized batch of the next `count` outputs (same values as next_u64)."""
        steps = np.arange(1, count + 1, dtype=np.uint64) * np.uint64(_GAMMA)
        z = np.uint64(self._state) + steps
        self._state = (self._state + count * _GAMMA) & _MASK
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def next_uniform(self) -> float:
        return (self.next_u64() >> 11) * _TWO_POW_NEG53

    def uniforms(self, count: int) -> np.ndarray:
        """float64 uniforms in [0, 1); bit-identical to repeated next_uniform()."""
        return (self.u64_block(count) >> np.uint64(11)).astype(np.float64) * _TWO_POW_NEG53

    def next_gaussian(self) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        a = self.next_u64()
        b = self.next_u64()
        u1 = ((a >> 11) + 1) * _TWO_POW_NEG53
        u2 = (b >> 11) * _TWO_POW_NEG53
        r = math.sqrt(-2.0 * math.log(u1))
        t = 2.0 * math.pi * u2
        self._spare = r * math.sin(t)
        return r * math.cos(t)

    def gaussians(self, count: int) -> np.ndarray:
        """float64 standard normals; scalar math.* path keeps the stream pinned."""
        out = np.empty(count, dtype=np.float64)
        for i in range(count):
            out[i] = self.next_gaussian()
        return out


def gaussian_matrix(seed: int, rows: int, cols: int, scale: float) -> np.ndarray:
    """Frozen float32 matrix of seeded gaussians times `scale`, row-major fill."""
    z = SplitMix64(seed).gaussians(rows * cols)
    return (z * scale).astype(np.float32).reshape(rows, cols)


def unit_gaussian_vector(seed: int, dim: int) -> np.ndarray:
    """Seeded gaussian direction, L2-normalized, float32."""
    v = SplitMix64(seed).gaussians(dim)
    n = math.sqrt(float(np.dot(v, v)))
    if n == 0.0:  # unreachable in practice; keeps the contract total
        v[0] = 1.0
        n = 1.0
    return (v / n).astype(np.float32)
