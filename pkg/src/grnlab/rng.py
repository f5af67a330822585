"""Counter-based splittable random number generator.

All randomness in the project flows through this module so that runs are
bit-reproducible from a single seed and re-implementable from the following
description alone.

Algorithm
---------
The core generator is SplitMix64 in counter form.  Output ``i`` (0-based) of a
stream with seed ``s`` is::

    mix64((s + (i + 1) * 0x9E3779B97F4A7C15) mod 2**64)

where ``mix64`` is the finalizer::

    z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
    z ^= z >> 27;  z *= 0x94D049BB133111EB
    z ^= z >> 31

(all arithmetic mod 2**64).  Streams are split by name: the child seed for
stream ``name`` under parent seed ``s`` is ``mix64(s XOR mix64(fnv1a64(name)))``
with FNV-1a 64-bit over the ASCII bytes of ``name``.

Derived quantities:

* uniforms in [0, 1): ``(u64 >> 11) * 2**-53``
* standard normals: Box-Muller pairs
  ``sqrt(-2 ln(1 - u1)) * (cos, sin)(2 pi u2)`` consuming two uniforms per
  pair (``1 - u1`` keeps the log argument in (0, 1]).
* bounded integers: ``floor(uniform * n)``.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int (mod 2**64)."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def fnv1a64(name: str) -> int:
    """FNV-1a 64-bit hash of the ASCII bytes of ``name``."""
    h = 0xCBF29CE484222325
    for byte in name.encode("ascii"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class Rng:
    """One named stream of the documented counter-based generator."""

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        self._counter = 0

    def split(self, name: str) -> "Rng":
        """Derive an independent child stream; order of splits is irrelevant."""
        return Rng(mix64(self.seed ^ mix64(fnv1a64(name))))

    def next_u64(self) -> int:
        self._counter += 1
        return mix64((self.seed + self._counter * _GOLDEN) & _MASK64)

    def u64(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit outputs as a uint64 array."""
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * np.uint64(_GOLDEN)
            return _mix64_array(z)

    def uniforms(self, n: int) -> np.ndarray:
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normals(self, shape) -> np.ndarray:
        """Standard normals via Box-Muller on consecutive uniform pairs."""
        if isinstance(shape, int):
            shape = (shape,)
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        u = self.uniforms(2 * pairs)
        u1, u2 = u[:pairs], u[pairs:]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        theta = (2.0 * math.pi) * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape)

    def integers(self, n: int, high: int) -> np.ndarray:
        """``n`` integers uniform on [0, high) as int64."""
        if high <= 0:
            raise ValueError("high must be positive")
        return np.minimum((self.uniforms(n) * high).astype(np.int64), high - 1)
