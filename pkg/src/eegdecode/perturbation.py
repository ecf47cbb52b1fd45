"""Input-perturbation network-prediction correlation maps.

For each iteration every trial is perturbed with seeded Gaussian noise, either
on its spectral amplitudes (phases untouched) or directly on its voltages. Both
the original and perturbed trials go through the network in eval mode and the
change of each pre-softmax class score is correlated, over all (trial,
iteration) pairs, with the perturbation applied at each (electrode, feature).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .convnet import ConvNetModel, presoftmax
from .errors import InvalidInputError
from .signal import TrialSet

__all__ = [
    "CorrelationMap",
    "FrameDistanceSeries",
    "freq_perturbation_map",
    "time_perturbation_map",
    "average_maps",
    "frame_l1",
]

DEFAULT_ITERATIONS = 30
DEFAULT_SIGMA = 0.5


@dataclass(frozen=True)
class CorrelationMap:
    """``values[class, channel, feature]``; NaN marks missing entries."""

    values: np.ndarray
    axis_unit: str  # "Hz" (frequency bins) or "s" (time samples)
    axis_step: float
    n_iterations: int
    sigma: float
    channel_labels: tuple[str, ...] = ()

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def n_classes(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def n_features(self) -> int:
        return self.values.shape[2]

    @property
    def axis(self) -> np.ndarray:
        return np.arange(self.n_features) * self.axis_step

    def argmax_abs(self, cls: int) -> tuple[int, int]:
        """(channel, feature) index of the largest |correlation| for ``cls``."""
        vals = np.abs(self.values[cls])
        flat = np.nanargmax(vals)
        return tuple(int(i) for i in np.unravel_index(flat, vals.shape))


class _CorrelationAccumulator:
    """Streaming Pearson correlation between perturbations and score changes."""

    def __init__(self, n_classes, feature_shape):
        self.n = 0
        self.sum_p = np.zeros(feature_shape)
        self.sum_pp = np.zeros(feature_shape)
        self.sum_d = np.zeros(n_classes)
        self.sum_dd = np.zeros(n_classes)
        self.sum_pd = np.zeros((n_classes,) + tuple(feature_shape))

    def add(self, pert, diff):
        pert = np.asarray(pert, dtype=np.float64)
        diff = np.asarray(diff, dtype=np.float64)
        self.n += pert.shape[0]
        self.sum_p += pert.sum(axis=0)
        self.sum_pp += np.einsum("n...,n...->...", pert, pert)
        self.sum_d += diff.sum(axis=0)
        self.sum_dd += (diff**2).sum(axis=0)
        self.sum_pd += np.tensordot(diff.T, pert, axes=(1, 0))

    def correlation(self) -> np.ndarray:
        n = self.n
        mean_p = self.sum_p / n
        mean_d = self.sum_d / n
        var_p = np.maximum(self.sum_pp / n - mean_p**2, 0.0)
        var_d = np.maximum(self.sum_dd / n - mean_d**2, 0.0)
        extra = (slice(None),) + (None,) * mean_p.ndim
        cov = self.sum_pd / n - mean_d[extra] * mean_p[None]
        denom = np.sqrt(var_d[extra] * var_p[None])
        # relative floors: variances at rounding level count as zero
        p_floor = 1e-24 * np.maximum(self.sum_pp / n, 1e-300)
        d_floor = 1e-24 * np.maximum(self.sum_dd / n, 1e-300)
        bad = (var_p[None] <= p_floor[None]) | (var_d[extra] <= d_floor[extra])
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = np.where(bad, np.nan, cov / np.where(bad, 1.0, denom))
        return np.clip(corr, -1.0, 1.0)


def _validate(model: ConvNetModel, trials: TrialSet, n_iter: int, sigma: float, scale: str):
    if n_iter < 2:
        raise InvalidInputError("need at least 2 iterations")
    if not sigma > 0:
        raise InvalidInputError(f"sigma must be positive, got {sigma}")
    if scale not in ("relative", "absolute"):
        raise InvalidInputError(f"scale must be 'relative' or 'absolute', got {scale!r}")
    if trials.data.shape[1:] != (model.cfg.n_channels, model.cfg.n_samples):
        raise InvalidInputError("trial shape does not match the network input")


def _iteration_rngs(seed, n_iter):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_iter)]


def freq_perturbation_map(
    model: ConvNetModel,
    trials: TrialSet,
    n_iter: int = DEFAULT_ITERATIONS,
    sigma: float = DEFAULT_SIGMA,
    seed: int = 0,
    scale: str = "relative",
    batch_size: int = 64,
) -> CorrelationMap:
    """Correlation of score changes with spectral-amplitude perturbations.

    Noise std at (channel, bin) is ``sigma`` times the trial-averaged amplitude
    there (``scale="relative"``) or ``sigma`` itself (``"absolute"``).
    Perturbed amplitudes are clamped at 0; the correlation uses the
    amplitude change actually applied.
    """
    _validate(model, trials, n_iter, sigma, scale)
    x = np.asarray(trials.data, dtype=np.float64)
    n_time = x.shape[-1]
    coeffs = np.fft.rfft(x, axis=-1)
    amps = np.abs(coeffs)
    phase_factor = np.exp(1j * np.angle(coeffs))
    std = sigma * amps.mean(axis=0) if scale == "relative" else np.full(amps.shape[1:], sigma)
    base = presoftmax(model, x, batch_size).astype(np.float64)
    acc = _CorrelationAccumulator(model.cfg.n_classes, amps.shape[1:])
    for rng in _iteration_rngs(seed, n_iter):
        noise = rng.standard_normal(amps.shape) * std
        new_amps = np.maximum(amps + noise, 0.0)
        perturbed = np.fft.irfft(new_amps * phase_factor, n=n_time, axis=-1)
        diff = presoftmax(model, perturbed, batch_size).astype(np.float64) - base
        acc.add(new_amps - amps, diff)
    return CorrelationMap(
        values=acc.correlation(),
        axis_unit="Hz",
        axis_step=trials.sample_rate / n_time,
        n_iterations=n_iter,
        sigma=float(sigma),
        channel_labels=trials.channel_labels,
    )


def time_perturbation_map(
    model: ConvNetModel,
    trials: TrialSet,
    n_iter: int = DEFAULT_ITERATIONS,
    sigma: float = DEFAULT_SIGMA,
    seed: int = 0,
    scale: str = "relative",
    batch_size: int = 64,
) -> CorrelationMap:
    """Correlation of score changes with additive voltage perturbations.

    Noise std on a channel is ``sigma`` times that channel's standard
    deviation over all trials and samples (``"relative"``) or ``sigma``.
    """
    _validate(model, trials, n_iter, sigma, scale)
    x = np.asarray(trials.data, dtype=np.float64)
    if scale == "relative":
        std = sigma * x.std(axis=(0, 2))[:, None]
    else:
        std = np.full((x.shape[1], 1), float(sigma))
    base = presoftmax(model, x, batch_size).astype(np.float64)
    acc = _CorrelationAccumulator(model.cfg.n_classes, x.shape[1:])
    for rng in _iteration_rngs(seed, n_iter):
        noise = rng.standard_normal(x.shape) * std
        diff = presoftmax(model, x + noise, batch_size).astype(np.float64) - base
        acc.add(noise, diff)
    return CorrelationMap(
        values=acc.correlation(),
        axis_unit="s",
        axis_step=1.0 / trials.sample_rate,
        n_iterations=n_iter,
        sigma=float(sigma),
        channel_labels=trials.channel_labels,
    )


def average_maps(maps) -> CorrelationMap:
    """Entry-wise mean of several maps (e.g. across subjects), ignoring missing cells."""
    maps = list(maps)
    if not maps:
        raise InvalidInputError("no maps to average")
    shapes = {m.values.shape for m in maps}
    if len(shapes) != 1:
        raise InvalidInputError(f"maps have different shapes: {sorted(shapes)}")
    stack = np.stack([m.values for m in maps])
    present = ~np.isnan(stack)
    total = np.where(present, stack, 0.0).sum(axis=0)
    count = present.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    first = maps[0]
    return CorrelationMap(
        values=mean,
        axis_unit=first.axis_unit,
        axis_step=first.axis_step,
        n_iterations=sum(m.n_iterations for m in maps),
        sigma=first.sigma,
        channel_labels=first.channel_labels,
    )


# ---------------------------------------------------------------------------
# stimulus frame distances


@dataclass(frozen=True)
class FrameDistanceSeries:
    delta_norm: np.ndarray
    mode: str  # "between" or "sequential"


def frame_l1(frames_a, frames_b=None, mode: str = "between", max_value: int = 255):
    """Normalized L1 distance per frame, in [0, 1].

    ``between``: |A_t - B_t| summed over pixels / (pixels * max_value).
    ``sequential``: the same for |A_t - A_{t-1}|; ``frames_b`` is ignored.
    """
    a = np.asarray(frames_a)
    if a.ndim != 3:
        raise InvalidInputError("frames must be an array of shape (n_frames, height, width)")
    a = a.astype(np.int64)
    if mode == "between":
        if frames_b is None:
            raise InvalidInputError("between-conditions mode needs two frame sequences")
        b = np.asarray(frames_b).astype(np.int64)
        if a.shape != b.shape:
            raise InvalidInputError(f"frame sequences differ in shape: {a.shape} vs {b.shape}")
        diff = np.abs(a - b)
    elif mode == "sequential":
        if a.shape[0] < 2:
            raise InvalidInputError("sequential mode needs at least 2 frames")
        diff = np.abs(a[1:] - a[:-1])
    else:
        raise InvalidInputError(f"unknown mode {mode!r}; use 'between' or 'sequential'")
    pixels = a.shape[1] * a.shape[2]
    delta = diff.reshape(diff.shape[0], -1).sum(axis=1) / (pixels * max_value)
    return FrameDistanceSeries(delta_norm=delta.astype(np.float64), mode=mode)
