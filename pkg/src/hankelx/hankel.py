"""Fast structured operators for the reweighted Hankel embedding.

An n1 x n2 Hankel matrix is constant along antidiagonals, so it carries only
n = n1 + n2 - 1 distinct values x_0..x_{n-1}.  We track the reweighted vector
z_a = sqrt(c_a) * x_a, where c_a counts the entries on antidiagonal a; then
||z||_2 equals the Frobenius norm of the matrix and the embedding
z -> Hankel(x) is an isometry whose adjoint composed with it is the identity.

The dense constructors exist for testing only.  Everything the solvers touch
(products with the embedded matrix, its adjoint, and the map from a factor
pair back to a vector) runs through length-n FFT convolutions and never
materializes the n1 x n2 matrix.

Indexing is 0-based everywhere in this module's public API.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .transforms import next_pow_two

__all__ = [
    "HankelShape",
    "WeightedSignal",
    "antidiagonal_counts",
    "unweight",
    "reweight",
    "hankel_dense",
    "hankel_adjoint_dense",
    "lowrank_to_signal",
    "hankel_matvec",
    "hankel_rmatvec",
    "hankel_matmat",
    "hankel_rmatmat",
]

# dense constructors refuse anything larger than this many matrix entries
DENSE_ENTRY_CAP = 4_000_000


@dataclass(frozen=True)
class HankelShape:
    """Row/column split of a length-n signal into an n1 x n2 Hankel matrix."""

    n1: int
    n2: int

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 1:
            raise ValueError("n1 and n2 must be positive")

    @property
    def n(self) -> int:
        return self.n1 + self.n2 - 1

    @classmethod
    def square(cls, n: int) -> "HankelShape":
        """Square-ish default split: n1 = ceil((n+1)/2)."""
        if n < 1:
            raise ValueError("n must be positive")
        n1 = (n + 2) // 2
        return cls(n1, n - n1 + 1)


@dataclass
class WeightedSignal:
    """A length-n complex vector in the reweighted (sqrt-count scaled) domain."""

    shape: HankelShape
    z: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.complex128)
        if self.z.ndim != 1 or self.z.size != self.shape.n:
            raise ValueError(
                f"signal length {self.z.size} does not match shape n={self.shape.n}"
            )

    def copy(self) -> "WeightedSignal":
        return WeightedSignal(self.shape, self.z.copy())


def antidiagonal_counts(shape: HankelShape) -> np.ndarray:
    """Number of matrix entries on each antidiagonal a = 0..n-1."""
    n1, n2, n = shape.n1, shape.n2, shape.n
    a = np.arange(1, n + 1)
    return np.minimum.reduce([a, np.full(n, n1), np.full(n, n2), n + 1 - a])


@lru_cache(maxsize=32)
def _sqrt_counts_cached(n1: int, n2: int) -> np.ndarray:
    counts = antidiagonal_counts(HankelShape(n1, n2)).astype(np.float64)
    weights = np.sqrt(counts)
    weights.setflags(write=False)
    return weights


def _sqrt_counts(shape: HankelShape) -> np.ndarray:
    return _sqrt_counts_cached(shape.n1, shape.n2)


def unweight(sig: WeightedSignal) -> np.ndarray:
    """Raw antidiagonal values x_a = z_a / sqrt(c_a)."""
    return sig.z / _sqrt_counts(sig.shape)


def reweight(x, shape: HankelShape) -> WeightedSignal:
    """Inverse of :func:`unweight`: z_a = sqrt(c_a) * x_a."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 1 or x.size != shape.n:
        raise ValueError(f"expected length {shape.n}, got {x.size}")
    return WeightedSignal(shape, _sqrt_counts(shape) * x)


def _check_dense_cap(shape: HankelShape):
    if shape.n1 * shape.n2 > DENSE_ENTRY_CAP:
        raise ValueError(
            f"dense Hankel of {shape.n1}x{shape.n2} exceeds the test-only size cap"
        )


def hankel_dense(sig: WeightedSignal) -> np.ndarray:
    """Materialize the embedded Hankel matrix.  Testing only (size-capped)."""
    _check_dense_cap(sig.shape)
    x = unweight(sig)
    idx = np.add.outer(np.arange(sig.shape.n1), np.arange(sig.shape.n2))
    return x[idx]


def hankel_adjoint_dense(M, shape: HankelShape) -> WeightedSignal:
    """Adjoint of the embedding: rescaled antidiagonal sums.  Testing only."""
    _check_dense_cap(shape)
    M = np.asarray(M, dtype=np.complex128)
    if M.shape != (shape.n1, shape.n2):
        raise ValueError(f"expected {shape.n1}x{shape.n2} matrix, got {M.shape}")
    idx = np.add.outer(np.arange(shape.n1), np.arange(shape.n2))
    z = np.zeros(shape.n, dtype=np.complex128)
    np.add.at(z, idx.ravel(), M.ravel())
    return WeightedSignal(shape, z / _sqrt_counts(shape))


def _factor_pair(L, R, shape: HankelShape):
    L = np.asarray(L, dtype=np.complex128)
    R = np.asarray(R, dtype=np.complex128)
    if L.ndim != 2 or R.ndim != 2 or L.shape[1] != R.shape[1]:
        raise ValueError("factors must be 2-D with matching column counts")
    if L.shape[0] != shape.n1 or R.shape[0] != shape.n2:
        raise ValueError(
            f"factor rows ({L.shape[0]}, {R.shape[0]}) do not match shape "
            f"({shape.n1}, {shape.n2})"
        )
    return L, R


def lowrank_to_signal(L, R, shape: HankelShape) -> WeightedSignal:
    """Apply the embedding adjoint to the outer product L @ R^H.

    Each rank-one term contributes one linear convolution of a column of L
    with the conjugated column of R, so the cost is r FFTs of length O(n)
    instead of forming the n1 x n2 product.
    """
    L, R = _factor_pair(L, R, shape)
    n = shape.n
    size = next_pow_two(n)
    fl = np.fft.fft(L, size, axis=0)
    fr = np.fft.fft(R.conj(), size, axis=0)
    z = np.fft.ifft((fl * fr).sum(axis=1))[:n]
    return WeightedSignal(shape, z / _sqrt_counts(shape))


def hankel_matvec(sig: WeightedSignal, v) -> np.ndarray:
    """Product of the embedded Hankel matrix with a length-n2 vector."""
    v = np.asarray(v, dtype=np.complex128)
    if v.shape != (sig.shape.n2,):
        raise ValueError(f"expected length {sig.shape.n2}, got {v.shape}")
    return hankel_matmat(sig, v[:, None])[:, 0]


def hankel_rmatvec(sig: WeightedSignal, u) -> np.ndarray:
    """Conjugate-transpose product with a length-n1 vector."""
    u = np.asarray(u, dtype=np.complex128)
    if u.shape != (sig.shape.n1,):
        raise ValueError(f"expected length {sig.shape.n1}, got {u.shape}")
    return hankel_rmatmat(sig, u[:, None])[:, 0]


def hankel_matmat(sig: WeightedSignal, V) -> np.ndarray:
    """Hankel times an n2 x k block, one FFT per column plus one for the signal.

    Column j is sum_t x_{i+t} V_{t,j}: a sliding correlation of the raw values
    against each column, evaluated as a padded convolution with the column
    reversed.
    """
    V = np.asarray(V, dtype=np.complex128)
    n1, n2, n = sig.shape.n1, sig.shape.n2, sig.shape.n
    if V.ndim != 2 or V.shape[0] != n2:
        raise ValueError(f"expected n2={n2} rows, got {V.shape}")
    x = unweight(sig)
    size = next_pow_two(n + n2 - 1)
    fx = np.fft.fft(x, size)
    fv = np.fft.fft(V[::-1, :], size, axis=0)
    out = np.fft.ifft(fx[:, None] * fv, axis=0)
    return out[n2 - 1 : n2 - 1 + n1, :]


def hankel_rmatmat(sig: WeightedSignal, U) -> np.ndarray:
    """Conjugate-transposed Hankel times an n1 x k block."""
    U = np.asarray(U, dtype=np.complex128)
    n1, n2, n = sig.shape.n1, sig.shape.n2, sig.shape.n
    if U.ndim != 2 or U.shape[0] != n1:
        raise ValueError(f"expected n1={n1} rows, got {U.shape}")
    x = unweight(sig)
    size = next_pow_two(n + n1 - 1)
    fx = np.fft.fft(x, size)
    fu = np.fft.fft(U[::-1, :].conj(), size, axis=0)
    out = np.fft.ifft(fx[:, None] * fu, axis=0)
    return out[n1 - 1 : n1 - 1 + n2, :].conj()
