"""Dense complex linear algebra at factor scale (r x r and n x r).

Thin, contract-checked fronts over LAPACK via numpy for the small dense
pieces, plus a randomized truncated SVD driven entirely by caller-supplied
block matvec callables so the large dimension is only ever touched through
fast operator products.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "DegenerateGramError",
    "TruncatedSVD",
    "hermitian_eig",
    "psd_sqrt",
    "inverse",
    "thin_qr",
    "truncated_svd",
]


class DegenerateGramError(RuntimeError):
    """Raised when a factor Gram matrix is numerically singular (rank collapse)."""


def _square(H, name="matrix") -> np.ndarray:
    H = np.asarray(H, dtype=np.complex128)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"{name} must be square, got {H.shape}")
    return H


def hermitian_eig(H) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian matrix.

    Returns (eigenvalues ascending, unitary eigenvector matrix).  Inputs must
    be Hermitian to within 1e-10 relative Frobenius error; the residual skew
    part is symmetrized away before factorization.
    """
    H = _square(H, "H")
    scale = np.linalg.norm(H)
    skew = np.linalg.norm(H - H.conj().T)
    if scale > 0 and skew > 1e-10 * scale:
        raise ValueError(f"matrix is not Hermitian (skew {skew:.3e} vs {scale:.3e})")
    Hs = 0.5 * (H + H.conj().T)
    try:
        w, Q = np.linalg.eigh(Hs)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"Hermitian eigensolver did not converge: {exc}") from exc
    return w, Q


def psd_sqrt(H) -> np.ndarray:
    """Hermitian PSD square root S with S @ S = H.

    Eigenvalues down to -1e-10 * ||H||_2 are clamped to zero; anything more
    negative means the input was not PSD and is rejected.
    """
    w, Q = hermitian_eig(H)
    top = max(w[-1], 0.0) if w.size else 0.0
    if w.size and w[0] < -1e-10 * max(top, 1e-300):
        raise ValueError(f"matrix is not PSD (min eigenvalue {w[0]:.3e})")
    s = np.sqrt(np.clip(w, 0.0, None))
    S = (Q * s) @ Q.conj().T
    return 0.5 * (S + S.conj().T)


def inverse(H) -> np.ndarray:
    """Inverse of a small square matrix, refusing near-singular inputs.

    Hermitian inputs (the factor Grams) are conditioned-checked through their
    eigenvalues and raise :class:`DegenerateGramError` on rank collapse;
    general inputs are checked through their singular values.
    """
    H = _square(H, "H")
    scale = np.linalg.norm(H)
    if scale == 0:
        raise DegenerateGramError("degenerate factor Gram matrix (zero input)")
    if np.linalg.norm(H - H.conj().T) <= 1e-10 * scale:
        w, Q = hermitian_eig(H)
        wabs = np.abs(w)
        if wabs.min() < 1e-12 * wabs.max():
            raise DegenerateGramError("degenerate factor Gram matrix")
        return (Q * (1.0 / w)) @ Q.conj().T
    s = np.linalg.svd(H, compute_uv=False)
    if s[-1] < 1e-12 * s[0]:
        raise DegenerateGramError("degenerate factor Gram matrix")
    return np.linalg.solve(H, np.eye(H.shape[0], dtype=np.complex128))


def thin_qr(A) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR of an n x r block (n >= r)."""
    A = np.asarray(A, dtype=np.complex128)
    if A.ndim != 2 or A.shape[0] < A.shape[1]:
        raise ValueError(f"thin_qr expects n >= r, got {A.shape}")
    Q, R = np.linalg.qr(A)
    return Q, R


@dataclass
class TruncatedSVD:
    """Rank-r factorization U @ diag(S) @ V^H with orthonormal U, V."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray


def _complete_orthonormal(V: np.ndarray, cols: list[int], rng: np.random.Generator):
    """Fill the listed columns with unit vectors orthogonal to the others."""
    n = V.shape[0]
    for j in cols:
        for _ in range(50):
            v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            v -= V @ (V.conj().T @ v)
            v -= V @ (V.conj().T @ v)
            norm = np.linalg.norm(v)
            if norm > 1e-8:
                V[:, j] = v / norm
                break
        else:
            raise RuntimeError("failed to complete an orthonormal basis")


def truncated_svd(
    matvec: Callable[[np.ndarray], np.ndarray],
    rmatvec: Callable[[np.ndarray], np.ndarray],
    n1: int,
    n2: int,
    rank: int,
    oversample: int | None = None,
    power_iters: int = 3,
    seed: int = 0,
) -> TruncatedSVD:
    """Randomized rank-r SVD of an implicit n1 x n2 operator.

    ``matvec`` and ``rmatvec`` must accept 2-D blocks: (n2, k) -> (n1, k) and
    (n1, k) -> (n2, k).  Subspace iteration starts from a complex Gaussian
    block of width rank + oversample, re-orthonormalizes with a thin QR after
    every half-step, and finishes with an eigendecomposition of the small
    projected Gram matrix.  Fully determined by ``seed``.
    """
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if oversample is None:
        oversample = max(10, 2 * rank)
    width = rank + oversample
    if width > min(n1, n2):
        raise ValueError(
            f"rank + oversample = {width} exceeds min(n1, n2) = {min(n1, n2)}"
        )
    rng = np.random.default_rng(seed)

    block = rng.standard_normal((n2, width)) + 1j * rng.standard_normal((n2, width))
    Q, _ = thin_qr(matvec(block))
    for _ in range(power_iters):
        Z, _ = thin_qr(rmatvec(Q))
        Q, _ = thin_qr(matvec(Z))

    W = rmatvec(Q)  # (n2, width); the projected matrix is W^H
    w, E = hermitian_eig(W.conj().T @ W)
    order = np.argsort(w)[::-1]
    w = np.clip(w[order], 0.0, None)
    E = E[:, order]

    S = np.sqrt(w[:rank])
    U = Q @ E[:, :rank]
    V = np.zeros((n2, rank), dtype=np.complex128)
    tiny = max(n1, n2) * np.finfo(np.float64).eps * (S[0] if S.size else 0.0)
    missing = []
    for j in range(rank):
        if S[j] > tiny and S[j] > 0:
            V[:, j] = (W @ E[:, j]) / S[j]
        else:
            S[j] = 0.0
            missing.append(j)
    if missing:
        _complete_orthonormal(V, missing, rng)
    return TruncatedSVD(U=U, S=S, V=V)
