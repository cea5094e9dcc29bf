"""Synthetic spectrally sparse signals, array snapshots, and outlier injection.

Signal files come in two interchangeable flavors, both storing the raw
(unweighted) antidiagonal values so weights can be recomputed on load:

* binary: magic ``HNKZ``, u32 version=1, u64 n, u32 n1, then n interleaved
  little-endian f64 (re, im) pairs;
* CSV: header ``index,re,im``, one row per entry.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hankel import (
    HankelShape,
    WeightedSignal,
    hankel_matmat,
    hankel_rmatmat,
    reweight,
    unweight,
)
from .linalg import truncated_svd
from .sampling import ObservationPattern, SparseEstimate, project_obs

__all__ = [
    "SpectralModel",
    "OutlierSpec",
    "ConditionEstimate",
    "spectral_signal",
    "doa_signal",
    "inject_outliers",
    "condition_number",
    "save_signal",
    "load_signal",
    "save_signal_csv",
    "load_signal_csv",
]

_MAGIC = b"HNKZ"
_VERSION = 1
_REJECTION_CAP = 10_000


@dataclass(frozen=True)
class SpectralModel:
    """Ground-truth parameters of a sum-of-exponentials signal."""

    n: int
    r: int
    frequencies: np.ndarray
    amplitudes: np.ndarray
    kappa: float


@dataclass(frozen=True)
class OutlierSpec:
    """Corruption recipe: fraction of observed entries and magnitude multiplier."""

    alpha: float
    magnitude_scale: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0 + 1e-12:
            raise ValueError("alpha must lie in [0, 1]")


def _min_wraparound_gap(freqs: np.ndarray) -> float:
    if freqs.size < 2:
        return 1.0
    f = np.sort(freqs)
    gaps = np.diff(f)
    wrap = 1.0 - f[-1] + f[0]
    return float(min(gaps.min(), wrap))


def spectral_signal(
    n: int, r: int, kappa: float, seed: int
) -> tuple[WeightedSignal, SpectralModel]:
    """Exact rank-r signal with amplitudes evenly spaced over [1/kappa, 1].

    Frequencies are drawn uniformly on [0, 1) and redrawn until all pairwise
    wrap-around separations are at least 1/n, which keeps the embedded Hankel
    matrix at exact rank r.  Ill-conditioning comes from the amplitude spread.
    """
    shape = HankelShape.square(n)
    if r < 1 or r > min(shape.n1, shape.n2):
        raise ValueError(f"rank {r} not in [1, {min(shape.n1, shape.n2)}]")
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    rng = np.random.default_rng(seed)
    for _ in range(_REJECTION_CAP):
        freqs = rng.uniform(0.0, 1.0, size=r)
        if _min_wraparound_gap(freqs) >= 1.0 / n:
            break
    else:
        raise RuntimeError("could not draw separated frequencies")
    if r == 1:
        amps = np.array([1.0])
    else:
        amps = 1.0 / kappa + np.arange(r) * (1.0 - 1.0 / kappa) / (r - 1)
    t = np.arange(n)
    x = (amps[None, :] * np.exp(2j * np.pi * t[:, None] * freqs[None, :])).sum(axis=1)
    model = SpectralModel(n=n, r=r, frequencies=freqs, amplitudes=amps, kappa=kappa)
    return reweight(x, shape), model


def doa_signal(n: int, thetas_deg, gains=None, shape: HankelShape | None = None) -> WeightedSignal:
    """Uniform-linear-array snapshot for far-field sources at the given angles.

    Sensor j (0-based) sees sum_i g_i * exp(-pi*1j*j*sin(theta_i)) under
    half-wavelength element spacing; angles are in degrees.
    """
    thetas = np.atleast_1d(np.asarray(thetas_deg, dtype=np.float64))
    if gains is None:
        gains = np.ones(thetas.size, dtype=np.complex128)
    gains = np.atleast_1d(np.asarray(gains, dtype=np.complex128))
    if thetas.size != gains.size or thetas.size < 1:
        raise ValueError("thetas and gains must have equal positive length")
    if shape is None:
        shape = HankelShape.square(n)
    if shape.n != n:
        raise ValueError("shape does not match n")
    j = np.arange(n)
    phases = -1j * np.pi * np.outer(j, np.sin(np.deg2rad(thetas)))
    x = (np.exp(phases) * gains[None, :]).sum(axis=1)
    return reweight(x, shape)


def inject_outliers(
    z_true: WeightedSignal, pattern: ObservationPattern, spec: OutlierSpec
) -> tuple[np.ndarray, SparseEstimate]:
    """Corrupt ceil(alpha*m) distinct observed entries with uniform complex spikes.

    Real and imaginary parts are drawn uniformly over +-scale * mean(|Re|)
    and +-scale * mean(|Im|) of the clean signal.  Returns the observed vector
    f = P(z + s) and the planted sparse component.
    """
    n = z_true.shape.n
    if pattern.n != n:
        raise ValueError("pattern length does not match signal")
    rng = np.random.default_rng(spec.seed)
    m = pattern.m
    count = math.ceil(spec.alpha * m)
    s = np.zeros(n, dtype=np.complex128)
    if count > 0:
        observed = pattern.observed_set()
        if count > observed.size:
            raise ValueError(
                f"cannot corrupt {count} entries; only {observed.size} observed"
            )
        hit = rng.choice(observed, size=count, replace=False)
        re_scale = spec.magnitude_scale * np.abs(z_true.z.real).mean()
        im_scale = spec.magnitude_scale * np.abs(z_true.z.imag).mean()
        s[hit] = rng.uniform(-re_scale, re_scale, size=count) + 1j * rng.uniform(
            -im_scale, im_scale, size=count
        )
    f_obs = project_obs(z_true.z + s, pattern)
    return f_obs, SparseEstimate(s)


@dataclass(frozen=True)
class ConditionEstimate:
    """sigma_1/sigma_r plus the rank-gap diagnostic sigma_{r+1}/sigma_1."""

    kappa: float
    rank_gap: float


def condition_number(sig: WeightedSignal, r: int, seed: int = 0) -> ConditionEstimate:
    """Condition number of the rank-r embedded Hankel matrix."""
    n1, n2 = sig.shape.n1, sig.shape.n2
    if r < 1 or r > min(n1, n2):
        raise ValueError(f"rank {r} not in [1, {min(n1, n2)}]")
    probe = r + 1 if r + 1 <= min(n1, n2) else r
    oversample = min(max(10, 2 * probe), min(n1, n2) - probe)
    tsvd = truncated_svd(
        matvec=lambda V: hankel_matmat(sig, V),
        rmatvec=lambda U: hankel_rmatmat(sig, U),
        n1=n1,
        n2=n2,
        rank=probe,
        oversample=oversample,
        seed=seed,
    )
    s = tsvd.S
    if s[r - 1] < 1e-14 * s[0]:
        raise ValueError(f"rank-deficient signal: sigma_{r} ~ {s[r - 1]:.3e}")
    gap = s[r] / s[0] if probe > r else float("nan")
    return ConditionEstimate(kappa=float(s[0] / s[r - 1]), rank_gap=float(gap))


def save_signal(path, sig: WeightedSignal) -> None:
    """Write the binary signal format (raw values; weights recomputed on load)."""
    x = unweight(sig)
    payload = np.empty(2 * x.size, dtype="<f8")
    payload[0::2] = x.real
    payload[1::2] = x.imag
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQI", _VERSION, x.size, sig.shape.n1))
        fh.write(payload.tobytes())


def load_signal(path) -> WeightedSignal:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        version, n, n1 = struct.unpack("<IQI", fh.read(16))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        payload = np.frombuffer(fh.read(16 * n), dtype="<f8")
    if payload.size != 2 * n:
        raise ValueError(f"{path}: truncated payload")
    x = payload[0::2] + 1j * payload[1::2]
    return reweight(x, HankelShape(int(n1), int(n) - int(n1) + 1))


def save_signal_csv(path, sig: WeightedSignal) -> None:
    """CSV flavor of the signal format (index, re, im); square shape on load."""
    x = unweight(sig)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "re", "im"])
        for i, v in enumerate(x):
            writer.writerow([i, repr(float(v.real)), repr(float(v.imag))])


def load_signal_csv(path) -> WeightedSignal:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["index", "re", "im"]:
            raise ValueError(f"{path}: unexpected header {header}")
        for row in reader:
            rows.append((int(row[0]), float(row[1]), float(row[2])))
    rows.sort()
    x = np.array([re + 1j * im for _, re, im in rows], dtype=np.complex128)
    return reweight(x, HankelShape.square(x.size))
