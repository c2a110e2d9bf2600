import math

import numpy as np
import pytest

from qxfer import synth
from qxfer.scheme import GradientScheme
from qxfer.synth import (MEASURE_NAMES, VoxelModel, add_rician_noise,
                         default_phantom, fibonacci_directions,
                         fractional_anisotropy, generate,
                         ground_truth_measures, signal)


def stick_tensor(d_axial=1.7e-3, direction=(1.0, 0.0, 0.0)):
    u = np.asarray(direction)
    return d_axial * np.outer(u, u)


class TestVoxelModel:
    def test_fractions_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum"):
            VoxelModel(((0.5, np.eye(3) * 1e-3),))

    def test_non_psd_tensor_rejected(self):
        bad = np.diag([1e-3, -1e-4, 1e-3])
        with pytest.raises(ValueError, match="semidefinite"):
            VoxelModel(((1.0, bad),))

    def test_asymmetric_tensor_rejected(self):
        bad = np.array([[1e-3, 1e-4, 0], [0, 1e-3, 0], [0, 0, 1e-3]])
        with pytest.raises(ValueError, match="symmetric"):
            VoxelModel(((1.0, bad),))


class TestSignal:
    def test_b0_gives_s0(self):
        model = VoxelModel(((1.0, 1e-3 * np.eye(3)),), s0=2.5)
        scheme = GradientScheme([0.0], [[0, 0, 0]])
        np.testing.assert_allclose(signal(model, scheme), [2.5])

    def test_isotropic_closed_form_any_direction(self):
        d = 1.2e-3
        model = VoxelModel(((1.0, d * np.eye(3)),), s0=1.0)
        dirs = fibonacci_directions(15)
        scheme = GradientScheme(np.full(15, 2000.0), dirs)
        np.testing.assert_allclose(signal(model, scheme),
                                   math.exp(-2000.0 * d), rtol=1e-12)

    def test_stick_perpendicular_gives_s0(self):
        model = VoxelModel(((1.0, stick_tensor()),), s0=1.0)
        scheme = GradientScheme([3000.0], [[0, 1, 0]])
        np.testing.assert_allclose(signal(model, scheme), [1.0])

    def test_mixture_is_fraction_weighted(self):
        d1, d2 = 0.5e-3, 2.0e-3
        model = VoxelModel(((0.3, d1 * np.eye(3)), (0.7, d2 * np.eye(3))))
        scheme = GradientScheme([1000.0], [[0, 0, 1]])
        expect = 0.3 * math.exp(-1.0e3 * d1) + 0.7 * math.exp(-1.0e3 * d2)
        np.testing.assert_allclose(signal(model, scheme), [expect])


class TestGroundTruthMeasures:
    def test_pure_isotropic(self):
        model = VoxelModel(((1.0, 3e-3 * np.eye(3)),))
        assert ground_truth_measures(model) == (0.0, 1.0, 0.0)

    def test_pure_stick_has_unit_fa(self):
        model = VoxelModel(((1.0, stick_tensor()),))
        f_aniso, f_iso, fa = ground_truth_measures(model)
        assert (f_aniso, f_iso) == (1.0, 0.0)
        assert fa == pytest.approx(1.0, abs=1e-12)

    def test_fifty_fifty_mixture(self):
        model = VoxelModel(((0.5, stick_tensor()), (0.5, 3e-3 * np.eye(3))))
        f_aniso, f_iso, _ = ground_truth_measures(model)
        assert f_aniso == pytest.approx(0.5)
        assert f_iso == pytest.approx(0.5)

    def test_fa_of_weighted_anisotropic_tensor(self):
        t = stick_tensor()
        model = VoxelModel(((0.6, t), (0.4, 2e-3 * np.eye(3))))
        _, _, fa = ground_truth_measures(model)
        assert fa == pytest.approx(fractional_anisotropy(0.6 * t / 0.6))


class TestRicianNoise:
    def test_sigma_zero_identity(self):
        x = np.linspace(0, 1, 10)
        np.testing.assert_array_equal(add_rician_noise(x, 0.0, seed=0), x)

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError, match="sigma"):
            add_rician_noise(np.ones(3), -0.1, seed=0)

    def test_same_seed_reproducible(self):
        x = np.full(100, 0.4)
        a = add_rician_noise(x, 0.05, seed=9)
        b = add_rician_noise(x, 0.05, seed=9)
        np.testing.assert_array_equal(a, b)

    def test_zero_signal_rayleigh_mean(self):
        # Monte-Carlo oracle: E[sqrt(n1^2 + n2^2)] = sigma s0 sqrt(pi/2)
        sigma = 0.3
        noisy = add_rician_noise(np.zeros(1_000_000), sigma, seed=10)
        expect = sigma * math.sqrt(math.pi / 2)
        assert noisy.mean() == pytest.approx(expect, rel=0.02)


class TestFibonacciDirections:
    def test_unit_norm(self):
        d = fibonacci_directions(50)
        np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0,
                                   atol=1e-12)

    def test_no_duplicate_directions(self):
        d = fibonacci_directions(30)
        gram = np.abs(d @ d.T)
        np.fill_diagonal(gram, 0.0)
        # near-antipodal pole pairs are inherent to a full-sphere spiral,
        # but no two samples may coincide on the projective sphere
        assert gram.max() < 0.99995
        assert np.median(gram) < 0.9


class TestGenerate:
    def test_shapes_and_masks(self):
        config = default_phantom((8, 8, 8), seed=0)
        src = synth.source_scheme()
        tgt = synth.target_scheme()
        data = generate(config, src, tgt)
        assert data.dwi_source.data.shape == (8, 8, 8, len(src))
        assert data.dwi_target.data.shape == (8, 8, 8, len(tgt))
        assert len(data.measures) == len(MEASURE_NAMES)
        mask = data.mask.data.astype(bool)
        assert mask.any() and not mask.all()
        # outside the support everything is zero
        assert np.all(data.dwi_source.data[~mask] == 0.0)

    def test_constant_regions_give_piecewise_constant_measures(self):
        config = default_phantom((8, 8, 8), seed=1)
        data = generate(config, synth.source_scheme(), synth.target_scheme())
        labels = config.region_labels
        for vol in data.measures:
            for label in range(len(config.models)):
                sel = labels == label
                if sel.any():
                    vals = vol.data[sel]
                    assert vals.max() - vals.min() < 1e-12

    def test_deterministic_for_seed(self):
        src, tgt = synth.source_scheme(), synth.target_scheme()
        a = generate(default_phantom((6, 6, 6), seed=3, noise_sigma=0.02),
                     src, tgt)
        b = generate(default_phantom((6, 6, 6), seed=3, noise_sigma=0.02),
                     src, tgt)
        np.testing.assert_array_equal(a.dwi_source.data, b.dwi_source.data)
        np.testing.assert_array_equal(a.dwi_target.data, b.dwi_target.data)

    def test_different_seeds_differ(self):
        src, tgt = synth.source_scheme(), synth.target_scheme()
        a = generate(default_phantom((6, 6, 6), seed=3), src, tgt)
        b = generate(default_phantom((6, 6, 6), seed=4), src, tgt)
        assert not np.array_equal(a.dwi_source.data, b.dwi_source.data)

    def test_noise_keeps_ground_truth(self):
        src, tgt = synth.source_scheme(), synth.target_scheme()
        clean = generate(default_phantom((6, 6, 6), seed=5), src, tgt)
        noisy = generate(default_phantom((6, 6, 6), seed=5,
                                         noise_sigma=0.05), src, tgt)
        for a, b in zip(clean.measures, noisy.measures):
            np.testing.assert_array_equal(a.data, b.data)
        assert not np.array_equal(clean.dwi_source.data,
                                  noisy.dwi_source.data)

    def test_manifest_lists_all_regions(self):
        config = default_phantom((6, 6, 6), seed=6, noise_sigma=0.01)
        text = synth.format_manifest(config, synth.source_scheme(),
                                     synth.target_scheme())
        assert "seed = 6" in text
        assert "noise_sigma = 0.01" in text
        assert f"region_{len(config.models) - 1} = " in text

    def test_phantom_support_fits_patch_geometry(self):
        # interior of the default support must leave room for 3^3 patches
        config = default_phantom((12, 12, 12), seed=7)
        labels = config.region_labels
        inside = np.argwhere(labels >= 0)
        assert inside[:, 0].min() >= 1 and inside[:, 0].max() <= 10
