import numpy as np
import pytest
from scipy import signal as sps
from scipy.stats import chisquare

from sleepssl.augment import (AugSeed, T1, augment_epoch, bandpass_aug,
                              channel_flip, crop_resize, cutout_resize, noising,
                              permutation, random_mask, sample_transform,
                              time_shift)

T = 3840


def rng_(seed=0):
    return np.random.default_rng(seed)


class TestSampler:
    def test_uniform_over_members(self):
        rng = rng_(0)
        counts = {name: 0 for name in T1}
        n = 100_000
        for _ in range(n):
            name, _ = sample_transform("T1", rng)
            counts[name] += 1
        freqs = np.array([counts[m] / n for m in T1])
        assert np.abs(freqs - 0.25).max() < 0.01
        _, p = chisquare(list(counts.values()))
        assert p > 0.01

    def test_fixed_seed_reproducible(self):
        draws_a = [sample_transform("T2", rng_(42)) for _ in range(1)]
        seq_a = [sample_transform("T2", rng_(42)) for _ in range(50)]
        rng = rng_(42)
        seq_b = [sample_transform("T2", rng_(42)) for _ in range(50)]
        assert seq_a == seq_b

    def test_permutation_segment_range(self):
        rng = rng_(1)
        for _ in range(200):
            name, params = sample_transform("T2", rng)
            if name == "permutation":
                assert 5 <= params["n"] <= 20

    def test_aug_seed_determinism(self):
        a = AugSeed(7).rng(epoch_index=3, channel_index=1).random(5)
        b = AugSeed(7).rng(epoch_index=3, channel_index=1).random(5)
        c = AugSeed(7).rng(epoch_index=3, channel_index=0).random(5)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)


def tone(freq, rate=128.0, t=T):
    return np.sin(2 * np.pi * freq * np.arange(t) / rate)


class TestBandpassAug:
    def sos_gain(self, interval, freq, rate=128.0):
        sos = sps.butter(1, list(interval), btype="bandpass", fs=rate, output="sos")
        _, h = sps.sosfreqz(sos, worN=[freq], fs=rate)
        return np.abs(h[0]) ** 2  # forward-backward squares the response

    def test_passband_3hz(self):
        x = tone(3.0)
        out = bandpass_aug(x, (1.0, 5.0))
        measured = out[500:-500].std() / x[500:-500].std()
        assert measured == pytest.approx(self.sos_gain((1.0, 5.0), 3.0), rel=5e-2)
        assert measured >= 0.7

    def test_stopband_3hz(self):
        x = tone(3.0)
        out = bandpass_aug(x, (30.0, 50.0))
        measured = out[500:-500].std() / x[500:-500].std()
        assert measured <= 0.2

    def test_zero_signal(self):
        assert np.allclose(bandpass_aug(np.zeros(T), (1.0, 5.0)), 0.0)


class TestNoising:
    def test_zero_degree_identity(self):
        x = rng_(0).normal(size=T)
        assert np.array_equal(noising(x, 0.0, "high", rng_(1)), x)

    def test_high_mode_bound(self):
        x = np.tile([1.0, -1.0], T // 2)  # range 2
        out = noising(x, 0.05, "high", rng_(2))
        assert np.abs(out - x).max() <= 0.05 * 2 + 1e-12

    def test_constant_signal_unchanged(self):
        x = np.full(T, 4.2)
        assert np.array_equal(noising(x, 0.1, "both", rng_(3)), x)

    def test_low_mode_degrees_of_freedom(self):
        x = np.zeros(T)
        out = noising(x, 0.1, "low", rng_(4))
        noise = out - x
        # piecewise linear with at most ceil(0.01 * T) = 39 knots
        curvature = np.abs(np.diff(noise, 2))
        assert (curvature > 1e-9).sum() <= 39


class TestChannelFlip:
    def test_two_channel_swap(self):
        epoch = np.vstack([np.ones(T), np.zeros(T)])
        out = channel_flip(epoch)
        assert np.array_equal(out[0], epoch[1])
        assert np.array_equal(out[1], epoch[0])

    def test_involution(self):
        epoch = rng_(0).normal(size=(2, T))
        assert np.array_equal(channel_flip(channel_flip(epoch)), epoch)

    def test_single_channel_identity_with_warning(self):
        epoch = rng_(0).normal(size=(1, T))
        with pytest.warns(UserWarning):
            out = channel_flip(epoch)
        assert np.array_equal(out, epoch)


class TestTimeShift:
    def test_zero_offset_identity(self):
        x = rng_(0).normal(size=T)
        assert np.array_equal(time_shift(x, 0), x)

    def test_rotation(self):
        assert np.array_equal(time_shift(np.array([1.0, 2, 3, 4]), 1), [4, 1, 2, 3])

    def test_multiset_preserved(self):
        x = rng_(1).normal(size=T)
        assert np.array_equal(np.sort(time_shift(x, 123)), np.sort(x))


class TestPermutation:
    def test_length_and_multiset(self):
        x = rng_(0).normal(size=T)
        out = permutation(x, 10, rng_(1))
        assert out.shape == x.shape
        assert np.array_equal(np.sort(out), np.sort(x))

    def test_deterministic(self):
        x = rng_(0).normal(size=T)
        assert np.array_equal(permutation(x, 7, rng_(5)), permutation(x, 7, rng_(5)))

    def test_too_short(self):
        with pytest.raises(ValueError):
            permutation(np.zeros(3), 5, rng_(0))


class TestCropResize:
    def test_ramp_stays_affine(self):
        x = np.arange(T, dtype=float)
        out = crop_resize(x, 0.5, rng_(0))
        assert out.shape == x.shape
        resid = np.abs(np.diff(out, 2)).max()
        assert resid < 1e-9 * T

    def test_full_crop_identity(self):
        x = rng_(1).normal(size=T)
        assert np.allclose(crop_resize(x, 1.0, rng_(0)), x, atol=1e-9)

    def test_range_contained(self):
        x = rng_(2).normal(size=T)
        out = crop_resize(x, 0.3, rng_(3))
        assert out.min() >= x.min() - 1e-12
        assert out.max() <= x.max() + 1e-12


class TestCutoutResize:
    def test_constant_unchanged(self):
        x = np.full(T, 2.5)
        assert np.allclose(cutout_resize(x, 8, rng_(0)), 2.5)

    def test_length_always_preserved(self):
        rng = rng_(1)
        x = rng.normal(size=T)
        for _ in range(50):
            n = int(rng.integers(5, 21))
            assert cutout_resize(x, n, rng).shape == x.shape

    def test_range_contained(self):
        x = rng_(2).normal(size=T)
        out = cutout_resize(x, 12, rng_(3))
        assert out.min() >= x.min() - 1e-12
        assert out.max() <= x.max() + 1e-12


class TestRandomMask:
    def test_single_segment_at_quarter(self):
        # round(0.25 * 5) = round(1.25) = 1 segment
        x = np.ones(T)
        out = random_mask(x, 5, 0.25, rng_(0))
        runs = np.diff(np.flatnonzero(np.diff(np.concatenate(([1.0], out, [1.0])) == 0)))
        zero_starts = (np.diff((out == 0).astype(int)) == 1).sum() + (out[0] == 0)
        assert zero_starts == 1

    def test_unmasked_positions_unchanged(self):
        x = rng_(1).normal(size=T) + 10  # keep true values away from zero
        out = random_mask(x, 10, 0.5, rng_(2))
        kept = out != 0
        assert np.array_equal(out[kept], x[kept])

    def test_zero_fraction_distribution(self):
        x = np.ones(T)
        rng = rng_(3)
        fracs = []
        for _ in range(10_000):
            n = int(rng.integers(5, 21))
            m = float(rng.uniform(0.25, 0.75))
            out = random_mask(x, n, m, rng)
            fracs.append((out == 0).mean())
        fracs = np.array(fracs)
        assert fracs.min() >= 0.05
        assert fracs.max() <= 0.95


class TestEpochLevelProperties:
    @pytest.mark.parametrize("set_name", ["T1", "T2"])
    def test_shape_preserved_over_many_draws(self, set_name):
        rng = rng_(0)
        epoch = rng.normal(size=(2, 512))
        for _ in range(1000):
            out = augment_epoch(epoch, set_name, rng, rate_hz=128.0)
            assert out.shape == epoch.shape
            assert np.all(np.isfinite(out))

    def test_two_draws_differ(self):
        rng = rng_(1)
        epoch = rng.normal(size=(2, 512))
        distinct = 0
        trials = 100
        for i in range(trials):
            a = augment_epoch(epoch, "T1", AugSeed(10).rng(i, 0), rate_hz=128.0)
            b = augment_epoch(epoch, "T1", AugSeed(11).rng(i, 0), rate_hz=128.0)
            if not np.allclose(a, b):
                distinct += 1
        assert distinct >= 99

    def test_determinism_given_seed(self):
        epoch = rng_(2).normal(size=(2, 512))
        a = augment_epoch(epoch, "T2", AugSeed(5).rng(0, 0), rate_hz=128.0)
        b = augment_epoch(epoch, "T2", AugSeed(5).rng(0, 0), rate_hz=128.0)
        assert np.array_equal(a, b)
