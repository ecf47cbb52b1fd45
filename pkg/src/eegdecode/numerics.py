"""Numerical kernels shared by the decoders and the visualization code."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import signal as sps

from .errors import InvalidInputError, SingularMatrixError, UndefinedStatisticError

__all__ = [
    "Spectrum",
    "ShrunkCovariance",
    "fourier_forward",
    "fourier_inverse",
    "parseval_energy",
    "bandpass",
    "sample_covariance",
    "ledoit_wolf",
    "generalized_eig_sym",
    "pearson_r",
]


@dataclass(frozen=True)
class Spectrum:
    """Half spectrum of a real signal in polar form.

    ``amplitudes`` and ``phases`` have the signal's leading shape with the
    time axis replaced by ``n_time // 2 + 1`` frequency bins.
    """

    amplitudes: np.ndarray
    phases: np.ndarray
    bin_hz: float
    n_time: int

    @property
    def n_bins(self) -> int:
        return self.amplitudes.shape[-1]

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.bin_hz


def fourier_forward(signal, rate: float = 1.0) -> Spectrum:
    """Unnormalized real FFT along the last axis, split into amplitude and phase."""
    x = np.asarray(signal, dtype=np.float64)
    n = x.shape[-1]
    if n < 2:
        raise InvalidInputError(f"need at least 2 samples for a spectrum, got {n}")
    coeffs = np.fft.rfft(x, axis=-1)
    return Spectrum(
        amplitudes=np.abs(coeffs),
        phases=np.angle(coeffs),
        bin_hz=float(rate) / n,
        n_time=n,
    )


def fourier_inverse(spec: Spectrum) -> np.ndarray:
    """Inverse of :func:`fourier_forward` (scaled by ``1/n``)."""
    coeffs = spec.amplitudes * np.exp(1j * spec.phases)
    return np.fft.irfft(coeffs, n=spec.n_time, axis=-1)


def parseval_energy(spec: Spectrum) -> np.ndarray:
    """Signal energy sum(x**2) recovered from the half spectrum."""
    power = spec.amplitudes**2
    n = spec.n_time
    # interior bins stand for a conjugate pair
    weights = np.full(spec.n_bins, 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    return (power * weights).sum(axis=-1) / n


def _bandpass_sos(rate: float, lo: float, hi: float, order: int = 4) -> np.ndarray:
    if not (0 < lo < hi < rate / 2):
        raise InvalidInputError(
            f"band must satisfy 0 < lo < hi < rate/2, got {lo}-{hi} Hz at {rate} Hz"
        )
    return sps.butter(order, [lo, hi], btype="bandpass", fs=rate, output="sos")


def bandpass(signal, rate: float, lo: float, hi: float, axis: int = -1) -> np.ndarray:
    """Zero-phase Butterworth band-pass (4th order, forward-backward)."""
    sos = _bandpass_sos(rate, lo, hi)
    x = np.asarray(signal, dtype=np.float64)
    return sps.sosfiltfilt(sos, x, axis=axis)


def sample_covariance(X) -> np.ndarray:
    """Unbiased covariance of the rows of ``X`` (n_samples, n_features)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InvalidInputError("sample covariance needs a 2-D array with at least 2 rows")
    Xc = X - X.mean(axis=0)
    C = Xc.T @ Xc / (X.shape[0] - 1)
    return (C + C.T) / 2


@dataclass(frozen=True)
class ShrunkCovariance:
    matrix: np.ndarray
    gamma: float
    target_scale: float


def ledoit_wolf(X, gamma: float | None = None, assume_centered: bool = False) -> ShrunkCovariance:
    """Ledoit-Wolf shrinkage towards a scaled identity.

    Returns ``gamma * mu * I + (1 - gamma) * S`` where ``S = Xc.T @ Xc / n`` and
    ``mu = trace(S) / d``. Unless given, ``gamma`` is the finite-sample
    optimal shrinkage intensity ``min(b2, d2) / d2`` with

        d2 = ||S - mu I||^2
        b2 = 1/n^2 * sum_k ||x_k x_k^T - S||^2

    (norms are Frobenius norms divided by ``d``). ``gamma`` is clamped to [0, 1];
    a degenerate ``S == mu I`` shrinks fully.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InvalidInputError("Ledoit-Wolf needs a 2-D array with at least 2 rows")
    n, d = X.shape
    Xc = X if assume_centered else X - X.mean(axis=0)
    S = Xc.T @ Xc / n
    S = (S + S.T) / 2
    mu = float(np.trace(S)) / d
    if gamma is None:
        d2 = (np.sum(S**2) - 2 * mu * np.trace(S) + d * mu**2) / d
        if d2 <= 0:
            gamma = 1.0
        else:
            # sum_k ||x x^T - S||^2 = sum_k ||x||^4 - n ||S||^2
            row_sq = np.einsum("ij,ij->i", Xc, Xc)
            fourth = np.sum(row_sq**2)
            b2_bar = (fourth - n * np.sum(S**2)) / (n**2 * d)
            if b2_bar <= 1e-12 * fourth / (n**2 * d):  # cancellation noise
                b2_bar = 0.0
            gamma = min(max(b2_bar, 0.0), d2) / d2
    gamma = float(min(max(gamma, 0.0), 1.0))
    shrunk = (1.0 - gamma) * S
    shrunk[np.diag_indices(d)] += gamma * mu
    return ShrunkCovariance(matrix=shrunk, gamma=gamma, target_scale=mu)


def generalized_eig_sym(A, B) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``A w = lam B w`` for symmetric ``A`` and positive definite ``B``.

    Eigenvalues come back in descending order; columns of ``W`` are
    B-orthonormal (``W.T @ B @ W = I``).
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError("A and B must be square matrices of equal shape")
    A = (A + A.T) / 2
    B = (B + B.T) / 2
    try:
        scipy.linalg.cholesky(B, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(
            "B is not positive definite; add diagonal loading (regularize) before solving"
        ) from exc
    evals, evecs = scipy.linalg.eigh(A, B)
    order = np.argsort(evals)[::-1]
    return evals[order], evecs[:, order]


def pearson_r(x, y) -> float:
    """Product-moment correlation coefficient."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise InvalidInputError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 3:
        raise InvalidInputError("correlation needs at least 3 pairs")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = xc @ xc
    syy = yc @ yc
    if sxx == 0 or syy == 0:
        raise UndefinedStatisticError("correlation is undefined for constant input")
    r = (xc @ yc) / np.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))
