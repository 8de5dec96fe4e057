"""Deterministic EEG preprocessing: filtering, resampling, epoching, normalization.

All operations are pure functions of their inputs and safe to apply to many
recordings in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np
from scipy import signal

EPOCH_SECONDS = 30


@dataclass
class Recording:
    """A multi-channel raw signal with optional per-epoch stage labels."""

    id: str
    channels: list[str]
    rate_hz: float
    samples: np.ndarray  # C x N, microvolts
    labels: list[int] | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ValueError(f"samples must be C x N, got shape {self.samples.shape}")
        if self.samples.shape[0] != len(self.channels):
            raise ValueError(
                f"{len(self.channels)} channel names but {self.samples.shape[0]} signal rows"
            )
        if self.rate_hz <= 0:
            raise ValueError(f"rate_hz must be positive, got {self.rate_hz}")
        if self.labels is not None:
            n_epochs = int(self.samples.shape[1] // (EPOCH_SECONDS * self.rate_hz))
            if len(self.labels) != n_epochs:
                raise ValueError(
                    f"recording {self.id}: {len(self.labels)} labels for {n_epochs} epochs"
                )

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]


@dataclass
class Epoch:
    """One 30-second C x T sample matrix, the unit of pre-training."""

    data: np.ndarray  # C x T
    rate_hz: float
    label: int | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        expected_t = int(round(EPOCH_SECONDS * self.rate_hz))
        if self.data.ndim != 2 or self.data.shape[1] != expected_t:
            raise ValueError(
                f"epoch data must be C x {expected_t} at {self.rate_hz} Hz, "
                f"got shape {self.data.shape}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("epoch contains non-finite values")


@dataclass
class NormStats:
    """Per-channel z-score statistics, fitted on a declared set only."""

    mean: np.ndarray  # length C
    std: np.ndarray  # length C, strictly positive

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean/std must be matching length-C vectors")
        if np.any(self.std <= 0):
            bad = np.flatnonzero(self.std <= 0).tolist()
            raise ValueError(f"non-positive std for channel index(es) {bad}")


def bandpass(recording: Recording, low_hz: float, high_hz: float, order: int = 4) -> Recording:
    """Zero-phase Butterworth band-pass, applied per channel.

    Forward-backward filtering keeps the phase flat; length and rate are
    unchanged.
    """
    nyq = recording.rate_hz / 2.0
    if not (0 < low_hz < high_hz):
        raise ValueError(f"need 0 < low < high, got ({low_hz}, {high_hz})")
    if high_hz >= nyq:
        raise ValueError(f"high cutoff {high_hz} Hz >= Nyquist {nyq} Hz")
    if not np.all(np.isfinite(recording.samples)):
        raise ValueError(f"recording {recording.id} contains non-finite samples")

    sos = signal.butter(order, [low_hz, high_hz], btype="bandpass", fs=recording.rate_hz, output="sos")
    filtered = signal.sosfiltfilt(sos, recording.samples, axis=1)
    return replace(recording, samples=filtered)


def resample(recording: Recording, target_hz: float) -> Recording:
    """Polyphase FIR resampling to ``target_hz`` (rational ratios only)."""
    if target_hz <= 0:
        raise ValueError(f"target_hz must be positive, got {target_hz}")
    if target_hz == recording.rate_hz:
        return recording

    ratio = Fraction(target_hz / recording.rate_hz).limit_denominator(1000)
    up, down = ratio.numerator, ratio.denominator
    # padtype="line" avoids edge droop on signals with non-zero mean
    out = signal.resample_poly(recording.samples, up, down, axis=1, padtype="line")
    resampled = replace(recording, samples=out, rate_hz=float(target_hz), labels=None)
    resampled.labels = recording.labels
    if recording.labels is not None:
        n_epochs = int(out.shape[1] // (EPOCH_SECONDS * target_hz))
        resampled.labels = recording.labels[:n_epochs]
    return resampled


def segment(recording: Recording) -> list[Epoch]:
    """Split into non-overlapping 30-s epochs; the trailing remainder is dropped."""
    samples_per_epoch = int(round(EPOCH_SECONDS * recording.rate_hz))
    n_epochs = recording.n_samples // samples_per_epoch
    if n_epochs < 1:
        raise ValueError(
            f"recording {recording.id} has {recording.n_samples} samples, "
            f"shorter than one {samples_per_epoch}-sample epoch"
        )
    epochs = []
    for i in range(n_epochs):
        chunk = recording.samples[:, i * samples_per_epoch : (i + 1) * samples_per_epoch]
        label = recording.labels[i] if recording.labels is not None else None
        epochs.append(Epoch(data=chunk.copy(), rate_hz=recording.rate_hz, label=label))
    return epochs


def fit_norm(epochs: list[Epoch]) -> NormStats:
    """Per-channel mean/std over all samples of all fitting epochs."""
    if not epochs:
        raise ValueError("cannot fit normalization on an empty epoch set")
    stacked = np.concatenate([e.data for e in epochs], axis=1)
    mean = stacked.mean(axis=1)
    std = stacked.std(axis=1)
    if np.any(std == 0):
        bad = np.flatnonzero(std == 0).tolist()
        raise ValueError(f"zero-variance channel index(es) in fitting set: {bad}")
    return NormStats(mean=mean, std=std)


def apply_norm(epoch: Epoch, stats: NormStats) -> Epoch:
    """Return (x - mean) / std per channel."""
    if stats.mean.shape[0] != epoch.data.shape[0]:
        raise ValueError(
            f"stats are for {stats.mean.shape[0]} channels, epoch has {epoch.data.shape[0]}"
        )
    data = (epoch.data - stats.mean[:, None]) / stats.std[:, None]
    return Epoch(data=data, rate_hz=epoch.rate_hz, label=epoch.label)


def preprocess(recording: Recording, target_hz: float = 128.0,
               low_hz: float = 0.5, high_hz: float = 45.0) -> Recording:
    """Standard pipeline: resample, then band-pass."""
    out = resample(recording, target_hz)
    return bandpass(out, low_hz, high_hz)
