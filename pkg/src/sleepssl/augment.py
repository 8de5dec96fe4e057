"""Two augmentation families for EEG epochs and the per-channel random sampler.

Family one: band-pass distortion, uniform noising, channel flipping, circular
time shifting. Family two: segment permutation, crop-and-resize,
cutout-and-resize, random segment masking.

Every transform preserves length and channel count and is deterministic given
a seeded generator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import signal

T1 = ("bandpass_aug", "noising", "channel_flip", "time_shift")
T2 = ("permutation", "crop_resize", "cutout_resize", "random_mask")

SETS = {"T1": T1, "T2": T2}

# minimum samples per random segment so "unequal length" never degenerates
MIN_SEGMENT = 8

NOISE_DEGREE_RANGE = (0.05, 0.2)


@dataclass
class AugSeed:
    """Root seed for reproducible augmentation draws.

    Derived generators mix in (epoch index, channel index) so parallel
    application over epochs and channels stays deterministic.
    """

    seed: int
    counter: int = 0

    def rng(self, epoch_index: int = 0, channel_index: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence([self.seed, self.counter, epoch_index, channel_index])
        return np.random.default_rng(ss)

    def next_rng(self, epoch_index: int = 0, channel_index: int = 0) -> np.random.Generator:
        rng = self.rng(epoch_index, channel_index)
        self.counter += 1
        return rng


def sample_transform(set_name: str, rng: np.random.Generator) -> tuple[str, dict]:
    """Uniformly pick a member of the set and draw its parameters."""
    members = SETS[set_name]
    name = members[rng.integers(len(members))]
    return name, draw_params(name, rng)


def draw_params(name: str, rng: np.random.Generator) -> dict:
    if name == "bandpass_aug":
        return {"interval": ((1.0, 5.0), (30.0, 50.0))[rng.integers(2)]}
    if name == "noising":
        return {
            "degree": float(rng.uniform(*NOISE_DEGREE_RANGE)),
            "mode": ("high", "low", "both")[rng.integers(3)],
        }
    if name == "channel_flip":
        return {}
    if name == "time_shift":
        return {}  # offset drawn at apply time against the signal length
    if name == "permutation":
        return {"n": int(rng.integers(5, 21))}
    if name == "crop_resize":
        return {"m": float(rng.uniform(0.25, 0.75))}
    if name == "cutout_resize":
        return {"n": int(rng.integers(5, 21))}
    if name == "random_mask":
        return {"n": int(rng.integers(5, 21)), "m": float(rng.uniform(0.25, 0.75))}
    raise ValueError(f"unknown transform {name!r}")


def _segment_bounds(length: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Boundaries of n random unequal segments covering [0, length).

    Returns n+1 offsets; each segment gets at least MIN_SEGMENT samples when
    the signal allows it.
    """
    if length < n:
        raise ValueError(f"cannot split {length} samples into {n} segments")
    # floor at length / 4n keeps any masked/kept fraction within sane bounds
    min_len = max(MIN_SEGMENT, length // (4 * n))
    if length < n * min_len:
        min_len = max(1, length // n)
    slack = length - n * min_len
    cuts = np.sort(rng.integers(0, slack + 1, size=n - 1))
    lengths = np.diff(np.concatenate(([0], cuts, [slack]))) + min_len
    return np.concatenate(([0], np.cumsum(lengths)))


def bandpass_aug(x: np.ndarray, interval: tuple[float, float], rate_hz: float = 128.0) -> np.ndarray:
    """First-order Butterworth band-pass distortion of one channel."""
    low, high = interval
    nyq = rate_hz / 2.0
    high = min(high, nyq * 0.99)  # the (30, 50) band tops out near Nyquist at 128 Hz
    sos = signal.butter(1, [low, high], btype="bandpass", fs=rate_hz, output="sos")
    return signal.sosfiltfilt(sos, x)


def noising(x: np.ndarray, degree: float, mode: str, rng: np.random.Generator) -> np.ndarray:
    """Add uniform noise scaled by degree times the signal's amplitude range.

    High-frequency noise is per-sample; low-frequency noise is drawn at 1% of
    the signal length and linearly interpolated back.
    """
    t = x.shape[-1]
    amplitude = degree * (x.max() - x.min())
    if amplitude == 0:
        return x.copy()
    out = x.copy()
    if mode in ("high", "both"):
        out = out + rng.uniform(-1.0, 1.0, size=t) * amplitude
    if mode in ("low", "both"):
        n_points = int(np.ceil(0.01 * t))
        points = rng.uniform(-1.0, 1.0, size=max(n_points, 2)) * amplitude
        grid = np.linspace(0, t - 1, points.shape[0])
        out = out + np.interp(np.arange(t), grid, points)
    return out


def channel_flip(epoch_data: np.ndarray) -> np.ndarray:
    """Reverse the channel order of a C x T epoch."""
    if epoch_data.shape[0] == 1:
        warnings.warn("channel_flip on a single-channel epoch is the identity")
        return epoch_data.copy()
    return epoch_data[::-1].copy()


def time_shift(x: np.ndarray, offset: int) -> np.ndarray:
    """Circular rotation by ``offset`` samples."""
    t = x.shape[-1]
    if not 0 <= offset < t:
        raise ValueError(f"offset {offset} out of range [0, {t})")
    return np.roll(x, offset)


def permutation(x: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Split into n unequal segments, shuffle, and concatenate."""
    bounds = _segment_bounds(x.shape[-1], n, rng)
    segments = [x[bounds[i] : bounds[i + 1]] for i in range(n)]
    order = rng.permutation(n)
    return np.concatenate([segments[i] for i in order])


def crop_resize(x: np.ndarray, m: float, rng: np.random.Generator) -> np.ndarray:
    """Crop a random contiguous fraction m and stretch it back to full length."""
    t = x.shape[-1]
    crop_len = int(round(m * t))
    crop_len = max(2, min(crop_len, t))
    start = int(rng.integers(0, t - crop_len + 1))
    crop = x[start : start + crop_len]
    return np.interp(np.linspace(0, crop_len - 1, t), np.arange(crop_len), crop)


def cutout_resize(x: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Remove one of n random segments and stretch the rest back to full length."""
    t = x.shape[-1]
    bounds = _segment_bounds(t, n, rng)
    drop = int(rng.integers(n))
    kept = np.concatenate(
        [x[bounds[i] : bounds[i + 1]] for i in range(n) if i != drop]
    )
    return np.interp(np.linspace(0, kept.shape[0] - 1, t), np.arange(kept.shape[0]), kept)


def random_mask(x: np.ndarray, n: int, m: float, rng: np.random.Generator) -> np.ndarray:
    """Zero out round(m * n) of n random segments (at least 1, at most n - 1)."""
    t = x.shape[-1]
    bounds = _segment_bounds(t, n, rng)
    n_masked = int(np.floor(m * n + 0.5))  # round half up
    n_masked = min(max(n_masked, 1), n - 1)
    masked = rng.choice(n, size=n_masked, replace=False)
    out = x.copy()
    for i in masked:
        out[bounds[i] : bounds[i + 1]] = 0.0
    return out


def apply_transform(epoch_data: np.ndarray, channel: int, name: str, params: dict,
                    rng: np.random.Generator, rate_hz: float = 128.0) -> np.ndarray:
    """Apply one sampled transform to one channel of a C x T epoch.

    Channel flipping is realized per channel by substituting the mirrored
    channel's signal, so it composes with independent per-channel draws.
    """
    x = epoch_data[channel]
    if name == "bandpass_aug":
        return bandpass_aug(x, params["interval"], rate_hz)
    if name == "noising":
        return noising(x, params["degree"], params["mode"], rng)
    if name == "channel_flip":
        c = epoch_data.shape[0]
        return epoch_data[c - 1 - channel].copy()
    if name == "time_shift":
        return time_shift(x, int(rng.integers(x.shape[-1])))
    if name == "permutation":
        return permutation(x, params["n"], rng)
    if name == "crop_resize":
        return crop_resize(x, params["m"], rng)
    if name == "cutout_resize":
        return cutout_resize(x, params["n"], rng)
    if name == "random_mask":
        return random_mask(x, params["n"], params["m"], rng)
    raise ValueError(f"unknown transform {name!r}")


def augment_epoch(epoch_data: np.ndarray, set_name: str, rng: np.random.Generator,
                  rate_hz: float = 128.0) -> np.ndarray:
    """Draw and apply an independent transform for every channel of the epoch."""
    out = np.empty_like(epoch_data)
    for c in range(epoch_data.shape[0]):
        name, params = sample_transform(set_name, rng)
        out[c] = apply_transform(epoch_data, c, name, params, rng, rate_hz)
    return out
