"""Seeded two-class synthetic EEG with planted discriminative structure.

Scenario ``"A"`` adds a Gaussian voltage deflection (an ERP-like bump) to the
error-class trials at a set of electrodes. Scenario ``"B"`` adds a narrowband
oscillation to one electrode in every trial and scales its amplitude up in the
error class, i.e. a pure band-power contrast without a phase-locked component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .signal import DecodingInterval, TrialSet

__all__ = ["SynthConfig", "generate", "bump_waveform", "shuffled_labels", "stratified_split"]

_PINK_FLOOR_HZ = 1.0


@dataclass(frozen=True)
class SynthConfig:
    n_trials: int = 200  # per class
    n_channels: int = 16
    duration_s: float = 2.0
    sample_rate: float = 250.0
    scenario: str = "A"
    # scenario A
    erp_channels: tuple[int, ...] = (7,)
    erp_center_s: float = 1.0
    erp_width_s: float = 0.1  # full width at half maximum
    erp_amplitude: float = 5.0
    # scenario B
    band_channel: int = 5
    band_hz: float = 10.0
    band_amplitude: float = 1.0
    band_ratio: float = 3.0
    # background
    noise_std: float = 1.0
    white_fraction: float = 0.2
    snr: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scenario", str(self.scenario).upper())
        object.__setattr__(self, "erp_channels", tuple(int(c) for c in self.erp_channels))
        if self.n_trials < 1 or self.n_channels < 1:
            raise InvalidInputError("n_trials and n_channels must be positive")
        if self.duration_s <= 0 or self.sample_rate <= 0:
            raise InvalidInputError("duration and sample rate must be positive")
        if self.scenario not in ("A", "B"):
            raise InvalidInputError(f"unknown scenario {self.scenario!r}; expected 'A' or 'B'")
        if self.noise_std < 0 or self.snr < 0 or not (0 <= self.white_fraction <= 1):
            raise InvalidInputError("noise_std and snr must be >= 0, white_fraction in [0, 1]")
        if self.scenario == "A":
            if not self.erp_channels or any(
                not 0 <= c < self.n_channels for c in self.erp_channels
            ):
                raise InvalidInputError("ERP channels must index existing channels")
            if not 0 <= self.erp_center_s <= self.duration_s or self.erp_width_s <= 0:
                raise InvalidInputError("ERP bump must be centered inside the trial")
        else:
            if not 0 <= self.band_channel < self.n_channels:
                raise InvalidInputError("band channel must index an existing channel")
            if not 0 < self.band_hz < self.sample_rate / 2:
                raise InvalidInputError("band frequency must lie below Nyquist")
            if self.band_amplitude < 0 or self.band_ratio <= 0:
                raise InvalidInputError("band amplitude must be >= 0 and ratio > 0")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate))


def bump_waveform(cfg: SynthConfig) -> np.ndarray:
    """The planted scenario-A deflection (at ``snr=1``) over the trial's samples."""
    t = np.arange(cfg.n_samples) / cfg.sample_rate
    sd = cfg.erp_width_s / (2 * math.sqrt(2 * math.log(2)))
    return cfg.erp_amplitude * np.exp(-0.5 * ((t - cfg.erp_center_s) / sd) ** 2)


def _pink_shape(n: int, rate: float) -> np.ndarray:
    freqs = np.fft.rfftfreq(n, d=1.0 / rate)
    shape = np.zeros_like(freqs)
    nz = freqs > 0
    shape[nz] = 1.0 / np.sqrt(np.maximum(freqs[nz], _PINK_FLOOR_HZ))
    # unit mean power so that the time-domain variance is ~1
    return shape / np.sqrt(np.mean(shape**2))


def _background(rng: np.random.Generator, cfg: SynthConfig, shape: np.ndarray) -> np.ndarray:
    n = cfg.n_samples
    white_for_pink = rng.standard_normal((cfg.n_channels, n))
    pink = np.fft.irfft(np.fft.rfft(white_for_pink, axis=-1) * shape, n=n, axis=-1)
    white = rng.standard_normal((cfg.n_channels, n))
    mix = math.sqrt(1 - cfg.white_fraction) * pink + math.sqrt(cfg.white_fraction) * white
    return cfg.noise_std * mix


def generate(cfg: SynthConfig) -> TrialSet:
    """Draw ``2 * n_trials`` trials (balanced, randomly ordered) for ``cfg``."""
    n_total = 2 * cfg.n_trials
    root = np.random.SeedSequence(cfg.seed)
    order_ss, *trial_ss = root.spawn(n_total + 1)
    labels = np.repeat([0, 1], cfg.n_trials)
    labels = labels[np.random.default_rng(order_ss).permutation(n_total)]

    n = cfg.n_samples
    t = np.arange(n) / cfg.sample_rate
    shape = _pink_shape(n, cfg.sample_rate)
    bump = bump_waveform(cfg) * cfg.snr if cfg.scenario == "A" else None
    data = np.empty((n_total, cfg.n_channels, n), dtype=np.float64)
    for k in range(n_total):
        rng = np.random.default_rng(trial_ss[k])
        x = _background(rng, cfg, shape)
        if cfg.scenario == "A":
            if labels[k] == 1:
                x[list(cfg.erp_channels)] += bump
        else:
            phase = rng.uniform(0, 2 * np.pi)
            jitter = 1.0 + 0.1 * rng.standard_normal()
            gain = 1.0 + cfg.snr * (cfg.band_ratio - 1.0) if labels[k] == 1 else 1.0
            amp = cfg.band_amplitude * gain * jitter
            x[cfg.band_channel] += amp * np.sin(2 * np.pi * cfg.band_hz * t + phase)
        data[k] = x
    return TrialSet(
        data=data,
        labels=labels,
        sample_rate=cfg.sample_rate,
        interval=DecodingInterval(0.0, n / cfg.sample_rate),
    )


def shuffled_labels(trials: TrialSet, seed: int) -> TrialSet:
    """Copy of ``trials`` with labels randomly permuted (chance-level control)."""
    rng = np.random.default_rng(seed)
    return trials.replace(labels=rng.permutation(trials.labels))


def stratified_split(labels, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Index arrays (train, test) with each class split in the same proportion."""
    labels = np.asarray(labels)
    if not 0 < test_fraction < 1:
        raise InvalidInputError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        n_test = int(round(len(idx) * test_fraction))
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))
