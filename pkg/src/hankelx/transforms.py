"""Complex FFT and length-exact linear convolution/correlation.

All fast Hankel operations in this package reduce to the three primitives
here.  Convention: unnormalized forward DFT X_k = sum_t v_t exp(-2*pi*i*k*t/N),
1/N on the inverse.  Everything is complex128; arbitrary operand lengths are
handled by zero-padding products to the next power of two.
"""

from __future__ import annotations

import numpy as np

__all__ = ["fft", "ifft", "convolve", "correlate", "next_pow_two"]


def next_pow_two(n: int) -> int:
    """Smallest power of two >= n."""
    if n <= 1:
        return 1
    return 1 << (n - 1).bit_length()


def _as_complex_vector(v, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=np.complex128)
    if a.ndim != 1 or a.size == 0:
        raise ValueError(f"{name} must be a nonempty 1-D sequence")
    return a


def fft(v) -> np.ndarray:
    """Forward DFT of a complex vector (unnormalized)."""
    return np.fft.fft(_as_complex_vector(v, "v"))


def ifft(v) -> np.ndarray:
    """Inverse DFT, with the 1/N factor."""
    return np.fft.ifft(_as_complex_vector(v, "v"))


def convolve(a, b) -> np.ndarray:
    """Full linear convolution c_t = sum_{i+j=t} a_i b_j, length len(a)+len(b)-1.

    Computed by pointwise multiplication of zero-padded DFTs.
    """
    a = _as_complex_vector(a, "a")
    b = _as_complex_vector(b, "b")
    out_len = a.size + b.size - 1
    size = next_pow_two(out_len)
    return np.fft.ifft(np.fft.fft(a, size) * np.fft.fft(b, size))[:out_len]


def correlate(a, b) -> np.ndarray:
    """Sliding correlation c_t = sum_j a_{t+j} * conj(b_j), length len(a)-len(b)+1.

    The adjoint counterpart of :func:`convolve`; requires len(a) >= len(b).
    """
    a = _as_complex_vector(a, "a")
    b = _as_complex_vector(b, "b")
    if b.size > a.size:
        raise ValueError(f"correlate needs len(a) >= len(b), got {a.size} < {b.size}")
    full = convolve(a, b[::-1].conj())
    return full[b.size - 1 : a.size]
