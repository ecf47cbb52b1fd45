"""Continuous-EEG data model and the preprocessing chain.

Common-average re-referencing, anti-aliased resampling, causal exponential
moving standardization (per electrode) and cutting of stimulus-locked trials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import signal as sps

from .errors import InvalidInputError

__all__ = [
    "Recording",
    "DecodingInterval",
    "TrialSet",
    "StandardizerConfig",
    "round_half_away",
    "seconds_to_samples",
    "common_average_reference",
    "resample",
    "exp_moving_standardize",
    "cut_trials",
    "car_trials",
    "resample_trials",
    "standardize_trials",
    "crop_trials",
]

# one-sided taps per polyphase branch of the anti-aliasing filter
_HALF_TAPS_PER_PHASE = 32
_KAISER_BETA = 5.0
_CUTOFF_FRACTION = 0.9


def round_half_away(x: float) -> int:
    """Round to nearest integer, ties away from zero."""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def seconds_to_samples(seconds: float, rate: float) -> int:
    return round_half_away(seconds * rate)


@dataclass(frozen=True)
class Recording:
    """Continuous multichannel EEG, ``data`` is (n_channels, n_samples) in microvolts."""

    data: np.ndarray
    sample_rate: float
    channel_labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise InvalidInputError(f"recording data must be 2-D, got shape {data.shape}")
        n_channels, n_samples = data.shape
        if n_channels < 1 or n_samples < 1:
            raise InvalidInputError("recording needs at least one channel and one sample")
        if not self.sample_rate > 0:
            raise InvalidInputError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("recording contains non-finite samples")
        labels = tuple(self.channel_labels) or tuple(f"E{i + 1}" for i in range(n_channels))
        if len(labels) != n_channels:
            raise InvalidInputError(
                f"{len(labels)} channel labels given for {n_channels} channels"
            )
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))
        object.__setattr__(self, "channel_labels", labels)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def replace(self, **changes) -> "Recording":
        kwargs = dict(
            data=self.data, sample_rate=self.sample_rate, channel_labels=self.channel_labels
        )
        kwargs.update(changes)
        return Recording(**kwargs)


@dataclass(frozen=True)
class DecodingInterval:
    """Trial window in seconds relative to stimulus onset."""

    start_s: float
    end_s: float

    def __post_init__(self):
        if not (0 <= self.start_s < self.end_s):
            raise InvalidInputError(
                f"interval must satisfy 0 <= start < end, got {self.start_s}-{self.end_s}"
            )

    def __str__(self) -> str:
        return f"{self.start_s:g}-{self.end_s:g}s"


@dataclass(frozen=True)
class TrialSet:
    """Epoched EEG: ``data`` is (n_trials, n_channels, n_samples).

    Labels are 0 (correct robot action) or 1 (error).
    """

    data: np.ndarray
    labels: np.ndarray
    sample_rate: float
    interval: DecodingInterval
    channel_labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.dtype != np.float32:
            data = data.astype(np.float64, copy=False)
        if data.ndim != 3:
            raise InvalidInputError(f"trial data must be 3-D, got shape {data.shape}")
        labels = np.asarray(self.labels).astype(np.int64)
        if labels.shape != (data.shape[0],):
            raise InvalidInputError(
                f"{labels.size} labels given for {data.shape[0]} trials"
            )
        if labels.size and not np.all((labels == 0) | (labels == 1)):
            raise InvalidInputError("labels must be 0 (correct) or 1 (error)")
        if not self.sample_rate > 0:
            raise InvalidInputError("sample_rate must be positive")
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("trial data contains non-finite samples")
        labels_ = tuple(self.channel_labels) or tuple(
            f"E{i + 1}" for i in range(data.shape[1])
        )
        if len(labels_) != data.shape[1]:
            raise InvalidInputError("channel label count does not match channel count")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))
        object.__setattr__(self, "channel_labels", labels_)

    @property
    def n_trials(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def n_samples(self) -> int:
        return self.data.shape[2]

    def subset(self, index) -> "TrialSet":
        return self.replace(data=self.data[index], labels=self.labels[index])

    def replace(self, **changes) -> "TrialSet":
        kwargs = dict(
            data=self.data,
            labels=self.labels,
            sample_rate=self.sample_rate,
            interval=self.interval,
            channel_labels=self.channel_labels,
        )
        kwargs.update(changes)
        return TrialSet(**kwargs)

    def require_both_classes(self, min_per_class: int = 1) -> None:
        counts = np.bincount(self.labels, minlength=2)
        if counts.min() < min_per_class:
            raise InvalidInputError(
                f"need at least {min_per_class} trials per class, got counts {counts.tolist()}"
            )


@dataclass(frozen=True)
class StandardizerConfig:
    decay: float = 0.999
    eps: float = 1e-4

    def __post_init__(self):
        if not (0 < self.decay < 1):
            raise InvalidInputError(f"decay must lie in (0, 1), got {self.decay}")
        if not self.eps > 0:
            raise InvalidInputError(f"eps must be positive, got {self.eps}")


def common_average_reference(rec: Recording) -> Recording:
    """Subtract the instantaneous mean over electrodes from every electrode."""
    if rec.n_channels < 2:
        raise InvalidInputError("common average reference needs at least 2 channels")
    return rec.replace(data=_car(rec.data, axis=0))


def _car(data: np.ndarray, axis: int) -> np.ndarray:
    return data - data.mean(axis=axis, keepdims=True)


def _resample_ratio(rate: float, target_rate: float) -> tuple[int, int]:
    ratio = Fraction(target_rate).limit_denominator(10**6) / Fraction(rate).limit_denominator(
        10**6
    )
    return ratio.numerator, ratio.denominator


def _antialias_filter(up: int, down: int) -> np.ndarray:
    max_rate = max(up, down)
    half_len = _HALF_TAPS_PER_PHASE * max_rate
    return sps.firwin(
        2 * half_len + 1, _CUTOFF_FRACTION / max_rate, window=("kaiser", _KAISER_BETA)
    )


def _resample_array(data: np.ndarray, rate: float, target_rate: float) -> np.ndarray:
    """Resample along the last axis of ``data``."""
    if not target_rate > 0:
        raise InvalidInputError(f"target rate must be positive, got {target_rate}")
    n_in = data.shape[-1]
    n_out = round_half_away(n_in * target_rate / rate)
    if target_rate == rate:
        return data.copy()
    if n_out < 1:
        raise InvalidInputError("resampling would leave no samples")
    up, down = _resample_ratio(rate, target_rate)
    h = _antialias_filter(up, down)
    # odd-reflect the borders so the filter sees a smooth continuation
    half_in = -(-(len(h) // 2) // up)
    pad = -(-half_in // down) * down
    pad = min(pad, n_in - 1) if n_in > 1 else 0
    pad -= pad % down
    if pad > 0:
        widths = [(0, 0)] * (data.ndim - 1) + [(pad, pad)]
        padded = np.pad(data, widths, mode="reflect", reflect_type="odd")
    else:
        padded = data
    out = sps.resample_poly(padded, up, down, axis=-1, window=h)
    skip = pad * up // down
    out = out[..., skip:]
    if out.shape[-1] >= n_out:
        return np.ascontiguousarray(out[..., :n_out])
    widths = [(0, 0)] * (data.ndim - 1) + [(0, n_out - out.shape[-1])]
    return np.pad(out, widths, mode="edge")


def resample(rec: Recording, target_rate: float) -> Recording:
    """Polyphase FIR resampling with a Kaiser-windowed sinc low-pass.

    The low-pass cutoff sits at 0.9 of the lower of the two Nyquist
    frequencies. Output length is ``round(n_samples * target_rate / sample_rate)``.
    """
    data = _resample_array(rec.data, rec.sample_rate, target_rate)
    return rec.replace(data=data, sample_rate=float(target_rate))


def _ema_standardize(x: np.ndarray, decay: float, eps: float) -> np.ndarray:
    """Exponential moving standardization along the last axis.

    m_0 = x_0, v_0 = 0; for t >= 1
        m_t = decay * m_{t-1} + (1 - decay) * x_t
        v_t = decay * v_{t-1} + (1 - decay) * (x_t - m_t) ** 2
    output (x_t - m_t) / max(sqrt(v_t), sqrt(eps)).
    """
    x = np.asarray(x, dtype=np.float64)
    b = [1.0 - decay]
    a = [1.0, -decay]
    mean = np.empty_like(x)
    var = np.empty_like(x)
    mean[..., 0] = x[..., 0]
    var[..., 0] = 0.0
    if x.shape[-1] > 1:
        # IIR state d*y_{t-1} seeds the recursion from the t=0 values
        zi = (decay * x[..., :1])
        mean[..., 1:], _ = sps.lfilter(b, a, x[..., 1:], axis=-1, zi=zi)
        sq = (x[..., 1:] - mean[..., 1:]) ** 2
        var[..., 1:] = sps.lfilter(b, a, sq, axis=-1)
    return (x - mean) / np.maximum(np.sqrt(var), math.sqrt(eps))


def exp_moving_standardize(rec: Recording, cfg: StandardizerConfig | None = None) -> Recording:
    """Causal electrode-wise standardization with exponential moving mean/variance."""
    cfg = cfg or StandardizerConfig()
    return rec.replace(data=_ema_standardize(rec.data, cfg.decay, cfg.eps))


def cut_trials(
    rec: Recording,
    onsets,
    labels,
    interval: DecodingInterval,
) -> TrialSet:
    """Cut stimulus-locked trials ``[onset + start, onset + end)`` from a recording."""
    onsets = [int(o) for o in onsets]
    labels = np.asarray(labels)
    if len(onsets) != len(labels):
        raise InvalidInputError(
            f"{len(onsets)} onsets but {len(labels)} labels"
        )
    start = seconds_to_samples(interval.start_s, rec.sample_rate)
    stop = seconds_to_samples(interval.end_s, rec.sample_rate)
    length = stop - start
    if length < 1:
        raise InvalidInputError("decoding interval is shorter than one sample")
    trials = np.empty((len(onsets), rec.n_channels, length), dtype=np.float64)
    for k, onset in enumerate(onsets):
        if onset + start < 0 or onset + stop > rec.n_samples:
            raise InvalidInputError(
                f"trial at onset {onset} spans samples [{onset + start}, {onset + stop}) "
                f"outside the recording of {rec.n_samples} samples"
            )
        trials[k] = rec.data[:, onset + start : onset + stop]
    return TrialSet(
        data=trials,
        labels=labels,
        sample_rate=rec.sample_rate,
        interval=interval,
        channel_labels=rec.channel_labels,
    )


# ---------------------------------------------------------------------------
# trial-level variants, used when only epoched data is available


def car_trials(trials: TrialSet) -> TrialSet:
    if trials.n_channels < 2:
        raise InvalidInputError("common average reference needs at least 2 channels")
    return trials.replace(data=_car(np.asarray(trials.data, dtype=np.float64), axis=1))


def resample_trials(trials: TrialSet, target_rate: float) -> TrialSet:
    data = _resample_array(np.asarray(trials.data, dtype=np.float64), trials.sample_rate,
                           target_rate)
    return trials.replace(data=data, sample_rate=float(target_rate))


def standardize_trials(trials: TrialSet, cfg: StandardizerConfig | None = None) -> TrialSet:
    """Apply the moving standardization to each trial independently."""
    cfg = cfg or StandardizerConfig()
    return trials.replace(data=_ema_standardize(trials.data, cfg.decay, cfg.eps))


def crop_trials(trials: TrialSet, interval: DecodingInterval) -> TrialSet:
    """Restrict trials to a sub-window of their current interval."""
    cur = trials.interval
    if interval.start_s < cur.start_s or interval.end_s > cur.end_s:
        raise InvalidInputError(f"interval {interval} is not inside the trial window {cur}")
    rate = trials.sample_rate
    start = seconds_to_samples(interval.start_s - cur.start_s, rate)
    stop = start + seconds_to_samples(interval.end_s, rate) - seconds_to_samples(
        interval.start_s, rate
    )
    if stop > trials.n_samples:
        raise InvalidInputError(f"interval {interval} exceeds the available samples")
    return trials.replace(data=trials.data[:, :, start:stop].copy(), interval=interval)
