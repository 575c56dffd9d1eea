"""Dense numerics shared by every other module.

Matrices are plain 2-D ``numpy.float64`` arrays, one sample per row.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = [
    "as_matrix",
    "matmul",
    "sigmoid",
    "relu",
    "tanh",
    "Rng",
    "finite_diff_gradient",
    "relative_error",
    "max_relative_error",
]

# SplitMix64 reference constants (Steele, Lea & Flood).
_GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def as_matrix(values) -> np.ndarray:
    m = np.array(values, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got {m.ndim} dimensions")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with a fixed left-to-right summation order.

    Each entry is accumulated as ``((a[i,0]*b[0,j] + a[i,1]*b[1,j]) + ...)``,
    which is exactly what a naive triple loop computes. The result is therefore
    bitwise reproducible regardless of the BLAS build underneath numpy.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul needs 2-D operands, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    n, k = a.shape
    out = np.zeros((n, b.shape[1]), dtype=np.float64)
    for j in range(k):
        out += a[:, j : j + 1] * b[j]
    return out


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(np.asarray(x, dtype=np.float64))


class Rng:
    """SplitMix64 stream; draw ``i`` is ``mix(seed + (i + 1) * gamma)``.

    Because each draw depends only on its index, batches are generated
    vectorised while staying identical to the one-at-a-time reference.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        z = np.uint64(self.seed) + idx * _GOLDEN_GAMMA
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))

    def next_u64(self) -> int:
        return int(self._raw(1)[0])

    def uint64(self, n: int) -> np.ndarray:
        return self._raw(n)

    def uniform(self, size) -> np.ndarray:
        """Doubles in [0, 1) from the top 53 bits."""
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape))
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return u.reshape(shape)

    def normal(self, size, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """Box-Muller normals; consumes two raw draws per value."""
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape))
        raw = self._raw(2 * n)
        # u1 in (0, 1] keeps the log finite.
        u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return (mean + std * z).reshape(shape)

    def integers(self, high: int, size: int) -> np.ndarray:
        """Integers in [0, high) by multiply-shift on the top 32 bits."""
        if high <= 0:
            raise ValueError("high must be positive")
        top = (self._raw(size) >> np.uint64(32)).astype(np.uint64)
        return ((top * np.uint64(high)) >> np.uint64(32)).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.uniform(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[k] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def spawn(self) -> "Rng":
        return Rng(self.next_u64())


def finite_diff_gradient(
    f: Callable[[np.ndarray], float], theta, eps: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector.

    ``f`` receives a float64 vector. Its return value is differenced without
    casting, so an ``f`` that evaluates in extended precision avoids most of
    the cancellation error in ``f(theta + eps) - f(theta - eps)``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    theta = np.array(theta, dtype=np.float64).ravel()
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        old = theta[i]
        theta[i] = old + eps
        fp = f(theta)
        theta[i] = old - eps
        fm = f(theta)
        theta[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        # Difference taken in f's own precision (f may return np.longdouble).
        grad[i] = (fp - fm) / (2 * eps)
    return grad


def relative_error(g1, g2, floor: float = 1e-8) -> np.ndarray:
    g1 = np.asarray(g1, dtype=np.float64)
    g2 = np.asarray(g2, dtype=np.float64)
    return np.abs(g1 - g2) / np.maximum(np.maximum(np.abs(g1), np.abs(g2)), floor)


def max_relative_error(g1, g2, floor: float = 1e-8) -> float:
    err = relative_error(g1, g2, floor)
    return float(err.max()) if err.size else 0.0
