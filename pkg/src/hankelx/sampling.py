"""Observation patterns, the sampling projector, and hard thresholding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "WITH_REPLACEMENT",
    "WITHOUT_REPLACEMENT",
    "ObservationPattern",
    "SparseEstimate",
    "sample_pattern",
    "project_obs",
    "top_k_threshold",
    "sparsify_residual",
    "keep_count",
]

WITH_REPLACEMENT = "with_replacement"
WITHOUT_REPLACEMENT = "without_replacement"


@dataclass(frozen=True)
class ObservationPattern:
    """Sampled index multiset over [0, n) with its sampling mode."""

    n: int
    indices: np.ndarray
    mode: str

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        object.__setattr__(self, "indices", idx)
        if self.mode not in (WITH_REPLACEMENT, WITHOUT_REPLACEMENT):
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        if idx.ndim != 1:
            raise ValueError("indices must be a 1-D array")
        if idx.size and (idx.min() < 0 or idx.max() >= self.n):
            raise ValueError("indices out of range")
        if self.mode == WITHOUT_REPLACEMENT and np.unique(idx).size != idx.size:
            raise ValueError("without-replacement pattern has repeated indices")

    @property
    def m(self) -> int:
        return int(self.indices.size)

    @property
    def rate(self) -> float:
        return self.indices.size / self.n

    def multiplicities(self) -> np.ndarray:
        """Per-coordinate sample counts (0/1 in without-replacement mode)."""
        cached = self.__dict__.get("_mult")
        if cached is None:
            cached = np.bincount(self.indices, minlength=self.n).astype(np.float64)
            cached.setflags(write=False)
            object.__setattr__(self, "_mult", cached)
        return cached

    def observed_set(self) -> np.ndarray:
        return np.unique(self.indices)


@dataclass
class SparseEstimate:
    """A vector that is zero off its recorded support."""

    s: np.ndarray
    support: np.ndarray = field(default=None)

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.complex128)
        if self.support is None:
            self.support = np.flatnonzero(self.s)
        self.support = np.asarray(self.support, dtype=np.int64)
        off = np.ones(self.s.size, dtype=bool)
        off[self.support] = False
        if np.any(self.s[off] != 0):
            raise ValueError("estimate is nonzero off its support")

    @classmethod
    def zeros(cls, n: int) -> "SparseEstimate":
        return cls(np.zeros(n, dtype=np.complex128), np.empty(0, dtype=np.int64))


def sample_pattern(n: int, m: int, mode: str, seed: int) -> ObservationPattern:
    """Draw m uniform indices from [0, n) under the given mode, seeded."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.default_rng(seed)
    if mode == WITH_REPLACEMENT:
        idx = rng.integers(0, n, size=m)
    elif mode == WITHOUT_REPLACEMENT:
        if m > n:
            raise ValueError(f"cannot draw {m} distinct indices from {n}")
        idx = rng.choice(n, size=m, replace=False)
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    return ObservationPattern(n=n, indices=np.sort(idx), mode=mode)


def project_obs(v, pattern: ObservationPattern) -> np.ndarray:
    """Sampling projector: zero off the pattern.

    Under with-replacement sampling each coordinate is scaled by its sample
    multiplicity; under without-replacement this is the plain 0/1 mask.
    """
    v = np.asarray(v, dtype=np.complex128)
    if v.shape != (pattern.n,):
        raise ValueError(f"expected length {pattern.n}, got {v.shape}")
    return pattern.multiplicities() * v


def top_k_threshold(v, k: int) -> SparseEstimate:
    """Keep the k largest-in-magnitude entries verbatim, zero the rest.

    Ties break toward the lower index, so the result is a deterministic
    function of (v, k).  Selection is a linear-time partition: everything
    strictly above the k-th magnitude is kept, and the remaining slots fill
    from the boundary ties in index order.
    """
    v = np.asarray(v, dtype=np.complex128)
    if k < 0:
        raise ValueError("k must be >= 0")
    n = v.size
    out = np.zeros(n, dtype=np.complex128)
    if k == 0:
        return SparseEstimate(out, np.empty(0, dtype=np.int64))
    if k >= n:
        out[:] = v
        return SparseEstimate(out, np.flatnonzero(v))
    mag = np.abs(v)
    boundary = np.partition(mag, n - k)[n - k]
    chosen = mag > boundary
    need = k - int(np.count_nonzero(chosen))
    if need > 0:
        chosen[np.flatnonzero(mag == boundary)[:need]] = True
    out[chosen] = v[chosen]
    return SparseEstimate(out, np.flatnonzero(chosen & (v != 0)))


def keep_count(gamma: float, alpha: float, m: int, n: int) -> int:
    """Sparsification budget ceil(gamma * alpha * m), clamped to [0, n].

    A tiny slack keeps float roundoff in the product from bumping an exact
    integer budget up by one.
    """
    return int(min(max(math.ceil(gamma * alpha * m - 1e-9), 0), n))


def sparsify_residual(f_obs, z, pattern: ObservationPattern, k: int) -> SparseEstimate:
    """Hard-threshold the observed residual f - z down to its k largest entries."""
    f_obs = np.asarray(f_obs, dtype=np.complex128)
    z = np.asarray(z, dtype=np.complex128)
    if f_obs.shape != z.shape:
        raise ValueError("f and z must have equal length")
    return top_k_threshold(project_obs(f_obs - z, pattern), k)
