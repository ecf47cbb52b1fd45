"""Filter-bank common spatial patterns with a shrinkage-LDA back end."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, SingularMatrixError
from .numerics import bandpass, generalized_eig_sym
from .rlda import RldaModel, rlda_predict, rlda_train
from .signal import TrialSet

__all__ = [
    "DEFAULT_BANDS",
    "CspBandModel",
    "FbcspModel",
    "trial_covariances",
    "csp_from_covariances",
    "csp_fit",
    "csp_logvar_features",
    "fbcsp_features",
    "fbcsp_train",
    "fbcsp_predict",
]

DEFAULT_BANDS: tuple[tuple[float, float], ...] = tuple((lo, lo + 4.0) for lo in range(4, 40, 4))
DEFAULT_N_PAIRS = 2
_DIAGONAL_LOADING = 1e-6


@dataclass(frozen=True)
class CspBandModel:
    band: tuple[float, float]
    filters: np.ndarray  # (2 * n_pairs, n_channels), one spatial filter per row
    eigenvalues: np.ndarray

    @property
    def n_channels(self) -> int:
        return self.filters.shape[1]


@dataclass(frozen=True)
class FbcspModel:
    bands: tuple[CspBandModel, ...]
    lda: RldaModel
    n_pairs: int
    sample_rate: float

    def __post_init__(self):
        expected = len(self.bands) * self.n_pairs * 2
        if self.lda.n_features != expected:
            raise InvalidInputError(
                f"LDA has {self.lda.n_features} inputs, filter bank produces {expected}"
            )


def trial_covariances(trials) -> np.ndarray:
    """Trace-normalized spatial covariance of each (channels, time) trial."""
    X = np.asarray(trials, dtype=np.float64)
    X = X - X.mean(axis=-1, keepdims=True)
    covs = np.einsum("nct,ndt->ncd", X, X)
    traces = np.trace(covs, axis1=1, axis2=2)
    if np.any(traces <= 0):
        raise InvalidInputError("a trial has zero variance on every channel")
    return covs / traces[:, None, None]


def csp_from_covariances(
    cov0, cov1, n_pairs: int = DEFAULT_N_PAIRS, band=(0.0, 0.0)
) -> CspBandModel:
    """Solve ``C1 w = lam (C0 + C1) w`` and keep the ``n_pairs`` extreme filters at each end."""
    cov0 = np.asarray(cov0, dtype=np.float64)
    cov1 = np.asarray(cov1, dtype=np.float64)
    d = cov0.shape[0]
    if n_pairs < 1 or 2 * n_pairs > d:
        raise InvalidInputError(f"cannot take {n_pairs} filter pairs from {d} channels")
    composite = cov0 + cov1
    try:
        evals, evecs = generalized_eig_sym(cov1, composite)
    except SingularMatrixError:
        load = _DIAGONAL_LOADING * np.trace(composite) / d
        composite = composite + load * np.eye(d)
        try:
            evals, evecs = generalized_eig_sym(cov1, composite)
        except SingularMatrixError as exc:
            raise SingularMatrixError(
                "composite covariance is singular even after diagonal loading; "
                "increase the loading or remove linearly dependent channels"
            ) from exc
    keep = np.r_[0:n_pairs, d - n_pairs : d]
    return CspBandModel(
        band=(float(band[0]), float(band[1])),
        filters=np.ascontiguousarray(evecs[:, keep].T),
        eigenvalues=evals[keep],
    )


def csp_fit(trials_class0, trials_class1, n_pairs: int = DEFAULT_N_PAIRS, band=(0.0, 0.0)):
    """Fit CSP filters on two stacks of band-passed trials (n, channels, time)."""
    t0 = np.asarray(trials_class0, dtype=np.float64)
    t1 = np.asarray(trials_class1, dtype=np.float64)
    if len(t0) < 2 or len(t1) < 2:
        raise InvalidInputError("CSP needs at least 2 trials per class")
    if t0.ndim != 3 or t1.ndim != 3 or t0.shape[1] != t1.shape[1]:
        raise InvalidInputError("class trial stacks have different channel counts")
    cov0 = trial_covariances(t0).mean(axis=0)
    cov1 = trial_covariances(t1).mean(axis=0)
    return csp_from_covariances(cov0, cov1, n_pairs=n_pairs, band=band)


def csp_logvar_features(model: CspBandModel, trials) -> np.ndarray:
    """``log(var_j / sum_k var_k)`` of the spatially filtered signals.

    Accepts a single trial (channels, time) or a stack (n, channels, time).
    """
    X = np.asarray(trials, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.shape[1] != model.n_channels:
        raise InvalidInputError(
            f"filters expect {model.n_channels} channels, trial has {X.shape[1]}"
        )
    projected = np.einsum("fc,nct->nft", model.filters, X)
    var = projected.var(axis=-1)
    total = var.sum(axis=1, keepdims=True)
    if np.any(var <= 0) or np.any(total <= 0):
        raise InvalidInputError("zero-variance spatial projection; cannot take log-variance")
    feats = np.log(var / total)
    return feats[0] if single else feats


def _check_bands(bands, rate):
    for lo, hi in bands:
        if not (0 < lo < hi < rate / 2):
            raise InvalidInputError(f"band {lo}-{hi} Hz invalid at {rate} Hz sampling")


def fbcsp_features(bands, trials: TrialSet) -> np.ndarray:
    blocks = []
    for band_model in bands:
        lo, hi = band_model.band
        filtered = bandpass(trials.data, trials.sample_rate, lo, hi, axis=-1)
        blocks.append(csp_logvar_features(band_model, filtered))
    return np.concatenate(blocks, axis=1)


def fbcsp_train(
    trials: TrialSet, bands=DEFAULT_BANDS, n_pairs: int = DEFAULT_N_PAIRS
) -> FbcspModel:
    """Band-pass each band, fit CSP per band, train shrinkage LDA on all log-variances."""
    trials.require_both_classes(4)
    _check_bands(bands, trials.sample_rate)
    band_models = []
    for lo, hi in sorted(bands):
        filtered = bandpass(trials.data, trials.sample_rate, lo, hi, axis=-1)
        band_models.append(
            csp_fit(
                filtered[trials.labels == 0],
                filtered[trials.labels == 1],
                n_pairs=n_pairs,
                band=(lo, hi),
            )
        )
    band_models = tuple(band_models)
    feats = fbcsp_features(band_models, trials)
    lda = rlda_train(feats, trials.labels, feature_spec={"kind": "fbcsp-logvar"})
    return FbcspModel(bands=band_models, lda=lda, n_pairs=n_pairs, sample_rate=trials.sample_rate)


def fbcsp_predict(model: FbcspModel, trials: TrialSet) -> np.ndarray:
    if trials.n_channels != model.bands[0].n_channels:
        raise InvalidInputError(
            f"model expects {model.bands[0].n_channels} channels, got {trials.n_channels}"
        )
    return rlda_predict(model.lda, fbcsp_features(model.bands, trials))[0]
