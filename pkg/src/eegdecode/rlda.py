"""Two-class shrinkage LDA on time-binned voltage features."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InvalidInputError
from .numerics import ledoit_wolf
from .signal import TrialSet, round_half_away

__all__ = [
    "RldaModel",
    "rlda_features",
    "rlda_train",
    "rlda_predict",
    "fit_trials",
    "predict_trials",
]

DEFAULT_BIN_MS = 100.0


@dataclass(frozen=True)
class RldaModel:
    weights: np.ndarray
    bias: float
    gamma: float
    feature_spec: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if w.size == 0 or not np.all(np.isfinite(w)):
            raise InvalidInputError("LDA weights must be a nonempty finite vector")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_features(self) -> int:
        return self.weights.size

    def decision_function(self, features) -> np.ndarray:
        return rlda_predict(self, features)[1]


def _bin_samples(bin_ms: float, rate: float) -> int:
    if bin_ms < 1000.0 / rate - 1e-9:
        raise InvalidInputError(
            f"bin of {bin_ms} ms is shorter than one sample at {rate} Hz"
        )
    return max(1, round_half_away(bin_ms * rate / 1000.0))


def rlda_features(trials: TrialSet, bin_ms: float = DEFAULT_BIN_MS) -> np.ndarray:
    """Mean voltage per electrode in consecutive ``bin_ms`` bins, electrode-major.

    Samples after the last complete bin are dropped.
    """
    width = _bin_samples(bin_ms, trials.sample_rate)
    n_bins = trials.n_samples // width
    if n_bins < 1:
        raise InvalidInputError(
            f"bin of {width} samples is longer than the {trials.n_samples}-sample trial"
        )
    data = np.asarray(trials.data[:, :, : n_bins * width], dtype=np.float64)
    binned = data.reshape(trials.n_trials, trials.n_channels, n_bins, width).mean(axis=-1)
    return binned.reshape(trials.n_trials, trials.n_channels * n_bins)


def rlda_train(features, labels, gamma: float | None = None, feature_spec=None) -> RldaModel:
    """Fit ``w = inv(Sigma) (mu1 - mu0)``, ``b = -w.(mu0 + mu1)/2``.

    ``Sigma`` is the Ledoit-Wolf shrunk covariance of the class-mean-centered
    features (pooled within-class scatter); priors are taken as equal.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise InvalidInputError("features must be (n_trials, d) with one label per trial")
    counts = np.array([(y == 0).sum(), (y == 1).sum()])
    if counts.min() < 2:
        raise InvalidInputError(f"each class needs at least 2 trials, got {counts.tolist()}")
    mu0 = X[y == 0].mean(axis=0)
    mu1 = X[y == 1].mean(axis=0)
    centered = np.where((y == 1)[:, None], X - mu1, X - mu0)
    cov = ledoit_wolf(centered, gamma=gamma)
    diff = mu1 - mu0
    try:
        w = scipy.linalg.solve(cov.matrix, diff, assume_a="pos")
    except (np.linalg.LinAlgError, ValueError):
        w = np.linalg.lstsq(cov.matrix, diff, rcond=None)[0]
    bias = -float(w @ (mu0 + mu1)) / 2
    return RldaModel(weights=w, bias=bias, gamma=cov.gamma, feature_spec=dict(feature_spec or {}))


def rlda_predict(model: RldaModel, features) -> tuple[np.ndarray, np.ndarray]:
    """Scores ``w.x + b``; class 1 iff the score is strictly positive."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise InvalidInputError(
            f"model expects {model.n_features} features, got {X.shape[1]}"
        )
    scores = X @ model.weights + model.bias
    return (scores > 0).astype(np.int64), scores


def fit_trials(trials: TrialSet, bin_ms: float = DEFAULT_BIN_MS) -> RldaModel:
    feats = rlda_features(trials, bin_ms)
    spec = {
        "bin_ms": float(bin_ms),
        "n_channels": trials.n_channels,
        "n_samples": trials.n_samples,
        "sample_rate": trials.sample_rate,
    }
    return rlda_train(feats, trials.labels, feature_spec=spec)


def predict_trials(model: RldaModel, trials: TrialSet) -> np.ndarray:
    bin_ms = model.feature_spec.get("bin_ms", DEFAULT_BIN_MS)
    return rlda_predict(model, rlda_features(trials, bin_ms))[0]
