import numpy as np
import pytest

from qxfer import patches
from qxfer.niftio import DwiVolume, ScalarVolume, VolumeHeader
from qxfer.patches import (PatchGeometry, SampleSet, assemble,
                           concat_sample_sets, extract_inputs, extract_qdl,
                           extract_sr, flatten_patch, load_samples,
                           save_samples, unflatten_patch)
from qxfer.scheme import GradientScheme
from qxfer.synth import fibonacci_directions


def signals_volume(dims, n_grad, seed=0):
    rng = np.random.default_rng(seed)
    data = rng.uniform(0.1, 1.0, size=dims + (n_grad,))
    scheme = GradientScheme(np.full(n_grad, 1000.0),
                            fibonacci_directions(n_grad))
    return DwiVolume(VolumeHeader(data.shape), data, scheme)


def mask_volume(arr):
    arr = np.asarray(arr, dtype=float)
    return ScalarVolume(VolumeHeader(arr.shape, datatype="uint8"), arr)


def measure_volumes(dims, n, seed=1):
    rng = np.random.default_rng(seed)
    return [ScalarVolume(VolumeHeader(dims), rng.uniform(size=dims))
            for _ in range(n)]


def brute_force_centers(dims, mask, half):
    out = []
    for x in range(dims[0]):
        for y in range(dims[1]):
            for z in range(dims[2]):
                if not mask[x, y, z]:
                    continue
                if (x - half < 0 or x + half >= dims[0]
                        or y - half < 0 or y + half >= dims[1]
                        or z - half < 0 or z + half >= dims[2]):
                    continue
                out.append((x, y, z))
    return out


class TestExtractQdl:
    def test_empty_mask_no_samples(self):
        vol = signals_volume((5, 5, 5), 4)
        ss = extract_qdl(vol, measure_volumes((5, 5, 5), 2),
                         mask_volume(np.zeros((5, 5, 5))))
        assert len(ss) == 0

    def test_five_cube_full_mask_gives_27(self):
        vol = signals_volume((5, 5, 5), 4)
        ss = extract_qdl(vol, measure_volumes((5, 5, 5), 2),
                         mask_volume(np.ones((5, 5, 5))))
        assert len(ss) == 27

    def test_constant_signal_gives_identical_inputs(self):
        data = np.full((5, 5, 5, 3), 0.7)
        scheme = GradientScheme(np.full(3, 1000.0), fibonacci_directions(3))
        vol = DwiVolume(VolumeHeader(data.shape), data, scheme)
        ss = extract_qdl(vol, measure_volumes((5, 5, 5), 1),
                         mask_volume(np.ones((5, 5, 5))))
        assert np.all(ss.inputs == ss.inputs[0])

    def test_counts_match_brute_force_on_random_masks(self):
        rng = np.random.default_rng(2)
        for trial in range(50):
            dims = tuple(rng.integers(3, 8, size=3))
            mask = rng.random(dims) < 0.5
            vol = signals_volume(dims, 2, seed=trial)
            ss = extract_qdl(vol, measure_volumes(dims, 1, seed=trial),
                             mask_volume(mask.astype(float)))
            expected = brute_force_centers(dims, mask, 1)
            assert len(ss) == len(expected)
            assert [tuple(c) for c in ss.centers] == expected

    def test_target_is_center_measures(self):
        dims = (5, 5, 5)
        vol = signals_volume(dims, 2)
        measures = measure_volumes(dims, 3)
        ss = extract_qdl(vol, measures, mask_volume(np.ones(dims)))
        for i in range(len(ss)):
            x, y, z = ss.centers[i]
            expect = [m.data[x, y, z] for m in measures]
            np.testing.assert_array_equal(ss.targets[i], expect)

    def test_dim_mismatch_rejected(self):
        vol = signals_volume((5, 5, 5), 2)
        with pytest.raises(ValueError, match="dims"):
            extract_qdl(vol, measure_volumes((4, 4, 4), 1),
                        mask_volume(np.ones((5, 5, 5))))


class TestExtractSr:
    def test_lr7_full_mask_gives_27(self):
        lr = signals_volume((7, 7, 7), 3)
        hr = measure_volumes((14, 14, 14), 2)
        ss = extract_sr(lr, hr, mask_volume(np.ones((7, 7, 7))), gamma=2)
        assert len(ss) == 27
        assert ss.geometry.input_len == 125 * 3
        assert ss.geometry.target_len == 8 * 2

    def test_hr_dims_must_match_gamma_times_lr(self):
        lr = signals_volume((7, 7, 7), 3)
        hr = measure_volumes((13, 14, 14), 2)
        with pytest.raises(ValueError, match="dims"):
            extract_sr(lr, hr, mask_volume(np.ones((7, 7, 7))), gamma=2)

    def test_out_size_must_equal_gamma(self):
        lr = signals_volume((7, 7, 7), 3)
        hr = measure_volumes((14, 14, 14), 2)
        with pytest.raises(ValueError, match="out_size == gamma"):
            extract_sr(lr, hr, mask_volume(np.ones((7, 7, 7))), gamma=2,
                       out_size=3)

    def test_target_block_indexing(self):
        # center (1,1,1) with gamma=2 covers high-resolution voxels 2..3
        lr = signals_volume((5, 5, 5), 2)
        hr_data = np.zeros((10, 10, 10))
        hr_data[2:4, 2:4, 2:4] = 9.0
        hr = [ScalarVolume(VolumeHeader((10, 10, 10)), hr_data)]
        mask = np.zeros((5, 5, 5))
        mask[2, 2, 2] = 1  # eligible center nearest the block
        ss = extract_sr(lr, hr, mask_volume(mask), gamma=2)
        (sample,) = [ss.sample(i) for i in range(len(ss))]
        assert sample.center == (2, 2, 2)
        block = unflatten_patch(sample.target, 2, 1)[..., 0]
        # block spans hr voxels 4..5, so the 9.0 cube at 2..3 is outside
        np.testing.assert_array_equal(block, 0.0)
        hr_data[4:6, 4:6, 4:6] = 5.0
        ss = extract_sr(lr, hr, mask_volume(mask), gamma=2)
        block = unflatten_patch(ss.targets[0], 2, 1)[..., 0]
        np.testing.assert_array_equal(block, 5.0)


class TestFlattening:
    def test_roundtrip_permutation(self):
        rng = np.random.default_rng(3)
        patch = rng.normal(size=(3, 3, 3, 5))
        flat = flatten_patch(patch)
        np.testing.assert_array_equal(unflatten_patch(flat, 3, 5), patch)

    def test_voxel_major_channel_fastest(self):
        patch = np.zeros((2, 2, 2, 3))
        patch[0, 0, 0] = (1, 2, 3)
        patch[0, 0, 1] = (4, 5, 6)
        flat = flatten_patch(patch)
        np.testing.assert_array_equal(flat[:6], [1, 2, 3, 4, 5, 6])


class TestAssemble:
    def test_qdl_direct_scatter(self):
        geo = PatchGeometry("qdl", 3, 1, 1, 2, 2)
        preds = [((1, 1, 1), np.array([0.3, 0.6])),
                 ((2, 1, 1), np.array([0.9, 0.1]))]
        maps = assemble(preds, geo, (4, 4, 4))
        assert maps[0].data[1, 1, 1] == pytest.approx(0.3)
        assert maps[1].data[2, 1, 1] == pytest.approx(0.1)
        assert maps[0].data[0, 0, 0] == 0.0

    def test_sr_adjacent_centers_disjoint_blocks(self):
        geo = PatchGeometry("sr", 5, 2, 2, 2, 1)
        preds = [((0, 0, 0), np.full(8, 1.0)), ((1, 0, 0), np.full(8, 2.0))]
        maps = assemble(preds, geo, (4, 2, 2))
        np.testing.assert_array_equal(maps[0].data[0:2], 1.0)
        np.testing.assert_array_equal(maps[0].data[2:4], 2.0)

    def test_overlapping_predictions_averaged(self):
        geo = PatchGeometry("qdl", 3, 1, 1, 2, 1)
        preds = [((1, 1, 1), np.array([0.2])), ((1, 1, 1), np.array([0.4]))]
        maps = assemble(preds, geo, (3, 3, 3))
        assert maps[0].data[1, 1, 1] == pytest.approx(0.3)

    def test_out_of_bounds_center_rejected(self):
        geo = PatchGeometry("sr", 5, 2, 2, 2, 1)
        with pytest.raises(ValueError, match="outside"):
            assemble([((3, 0, 0), np.full(8, 1.0))], geo, (4, 2, 2))

    def test_extract_then_assemble_is_lossless(self):
        dims = (6, 6, 6)
        vol = signals_volume(dims, 2)
        measures = measure_volumes(dims, 3)
        rng = np.random.default_rng(4)
        mask = mask_volume((rng.random(dims) < 0.6).astype(float))
        ss = extract_qdl(vol, measures, mask)
        maps = assemble(zip(ss.centers, ss.targets), ss.geometry, dims)
        for got, ref in zip(maps, measures):
            covered = np.zeros(dims, dtype=bool)
            covered[tuple(ss.centers.T)] = True
            np.testing.assert_allclose(got.data[covered], ref.data[covered],
                                       atol=1e-12)
            np.testing.assert_array_equal(got.data[~covered], 0.0)

    def test_extract_then_assemble_sr_lossless(self):
        lr_dims = (6, 6, 6)
        hr_dims = (12, 12, 12)
        lr = signals_volume(lr_dims, 2)
        measures = measure_volumes(hr_dims, 2)
        mask = mask_volume(np.ones(lr_dims))
        ss = extract_sr(lr, measures, mask, gamma=2)
        maps = assemble(zip(ss.centers, ss.targets), ss.geometry, hr_dims)
        covered = np.zeros(hr_dims, dtype=bool)
        for x, y, z in ss.centers:
            covered[2 * x:2 * x + 2, 2 * y:2 * y + 2, 2 * z:2 * z + 2] = True
        for got, ref in zip(maps, measures):
            np.testing.assert_allclose(got.data[covered], ref.data[covered],
                                       atol=1e-12)


class TestPersistence:
    def test_save_load_roundtrip(self, tmp_path):
        dims = (5, 5, 5)
        vol = signals_volume(dims, 3)
        ss = extract_qdl(vol, measure_volumes(dims, 2),
                         mask_volume(np.ones(dims)))
        path = tmp_path / "samples.bin"
        save_samples(path, ss)
        back = load_samples(path)
        assert back.geometry == ss.geometry
        np.testing.assert_array_equal(back.centers, ss.centers)
        np.testing.assert_array_equal(back.inputs,
                                      ss.inputs.astype(np.float32))
        np.testing.assert_array_equal(back.targets,
                                      ss.targets.astype(np.float32))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTSAMPL" + b"\x00" * 64)
        with pytest.raises(ValueError, match="magic"):
            load_samples(path)

    def test_truncated_rejected(self, tmp_path):
        dims = (5, 5, 5)
        vol = signals_volume(dims, 3)
        ss = extract_qdl(vol, measure_volumes(dims, 2),
                         mask_volume(np.ones(dims)))
        path = tmp_path / "samples.bin"
        save_samples(path, ss)
        blob = path.read_bytes()
        path.write_bytes(blob[:len(blob) // 2])
        with pytest.raises(ValueError, match="truncated"):
            load_samples(path)

    def test_concat_requires_same_geometry(self):
        dims = (5, 5, 5)
        a = extract_qdl(signals_volume(dims, 3), measure_volumes(dims, 2),
                        mask_volume(np.ones(dims)))
        b = extract_qdl(signals_volume(dims, 3), measure_volumes(dims, 1),
                        mask_volume(np.ones(dims)))
        merged = concat_sample_sets([a, a])
        assert len(merged) == 2 * len(a)
        with pytest.raises(ValueError, match="geometry"):
            concat_sample_sets([a, b])
