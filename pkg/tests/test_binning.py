import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binfuse.binning import (
    BinSpace,
    bin_index,
    bin_indices,
    partition_prediction,
    partition_reference,
)
from binfuse.image_io import ReferenceBatch


class TestBinSpace:
    @pytest.mark.parametrize("width,bins", [(1, 256), (16, 16), (32, 8), (64, 4), (96, 3), (128, 2), (256, 1)])
    def test_bin_count(self, width, bins):
        assert BinSpace(width).num_bins == bins

    @pytest.mark.parametrize("width", [1, 2, 3, 5, 7, 16, 31, 32, 96, 100, 255, 256, 300])
    def test_last_bin_covers_255(self, width):
        t = BinSpace(width).num_bins
        assert (t - 1) * width <= 255 < t * width

    def test_rejects_bad_width(self):
        with pytest.raises(ValueError):
            BinSpace(0)
        with pytest.raises(ValueError):
            BinSpace(-4)


class TestBinIndex:
    def test_left_edge(self):
        assert bin_index(0.0, BinSpace(32)) == 0

    def test_top_value_falls_in_closed_last_bin(self):
        assert bin_index(255.0, BinSpace(32)) == 7

    def test_floor_division(self):
        assert bin_index(64.0, BinSpace(32)) == 2

    def test_remainder_bin_width(self):
        space = BinSpace(96)
        assert space.num_bins == 3
        assert bin_index(250.0, space) == 2

    def test_half_open_boundary(self):
        space = BinSpace(32)
        assert bin_index(31.999, space) == 0
        assert bin_index(32.0, space) == 1

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="clamp"):
            bin_index(-1.0, BinSpace(32))
        with pytest.raises(ValueError, match="clamp"):
            bin_indices(np.array([0.0, 300.0]), BinSpace(32))


def _batch_from_arrays(gt, preds):
    return ReferenceBatch(gt=np.asarray(gt, float), preds=np.asarray(preds, float), num_samples=1)


class TestPartitionReference:
    def test_single_bin_degenerate(self):
        batch = _batch_from_arrays(np.arange(6.0), np.full((1, 6), 10.0))
        groups = partition_reference(batch, BinSpace(32))
        assert list(groups) == [(0,)]
        assert groups[(0,)].count == 6
        assert groups[(0,)].gt_values.tolist() == list(range(6))

    def test_two_model_keys(self):
        batch = _batch_from_arrays([1.0, 2.0], [[10.0, 40.0], [10.0, 200.0]])
        groups = partition_reference(batch, BinSpace(32))
        assert set(groups) == {(0, 0), (1, 6)}
        assert groups[(0, 0)].pixel_indices.tolist() == [0]
        assert groups[(1, 6)].pixel_indices.tolist() == [1]

    def test_partition_is_complete_and_disjoint(self):
        rng = np.random.default_rng(42)
        total = 3 * 64 * 64
        batch = _batch_from_arrays(
            rng.uniform(0, 255, total), rng.uniform(0, 255, (3, total))
        )
        groups = partition_reference(batch, BinSpace(32))
        counts = sum(g.count for g in groups.values())
        assert counts == total
        seen = np.concatenate([g.pixel_indices for g in groups.values()])
        assert len(np.unique(seen)) == total

    def test_values_lie_inside_their_bins(self):
        rng = np.random.default_rng(1)
        batch = _batch_from_arrays(rng.uniform(0, 255, 500), rng.uniform(0, 255, (2, 500)))
        space = BinSpace(32)
        for key, group in partition_reference(batch, space).items():
            for m, bin_id in enumerate(key):
                got = bin_indices(group.pred_values[m], space)
                assert np.all(got == bin_id)

    def test_pixel_indices_ascend(self):
        rng = np.random.default_rng(2)
        batch = _batch_from_arrays(rng.uniform(0, 255, 400), rng.uniform(0, 255, (2, 400)))
        for group in partition_reference(batch, BinSpace(64)).values():
            assert np.all(np.diff(group.pixel_indices) > 0)

    def test_overshoot_clamped_before_binning(self):
        batch = _batch_from_arrays([10.0], [[260.0]])
        groups = partition_reference(batch, BinSpace(32))
        assert list(groups) == [(7,)]
        assert groups[(7,)].pred_values[0, 0] == 255.0

    def test_deterministic_across_runs(self):
        rng = np.random.default_rng(5)
        gt = rng.uniform(0, 255, 300)
        preds = rng.uniform(0, 255, (2, 300))
        a = partition_reference(_batch_from_arrays(gt, preds), BinSpace(16))
        b = partition_reference(_batch_from_arrays(gt, preds), BinSpace(16))
        assert list(a) == list(b)
        for key in a:
            assert np.array_equal(a[key].pixel_indices, b[key].pixel_indices)
            assert np.array_equal(a[key].gt_values, b[key].gt_values)


class TestPartitionPrediction:
    def test_identical_models_give_diagonal_keys(self):
        v = np.array([5.0, 100.0, 200.0, 255.0])
        groups = partition_prediction([v, v], BinSpace(32))
        assert all(k[0] == k[1] for k in groups)

    def test_boundary_pixel(self):
        groups = partition_prediction([np.array([31.999]), np.array([32.0])], BinSpace(32))
        assert list(groups) == [(0, 1)]

    def test_single_bin_space(self):
        rng = np.random.default_rng(0)
        preds = rng.uniform(0, 255, (3, 50))
        groups = partition_prediction(preds, BinSpace(256))
        assert list(groups) == [(0, 0, 0)]
        assert groups[(0, 0, 0)].size == 50

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="length"):
            partition_prediction([np.zeros(3), np.zeros(4)], BinSpace(32))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), width=st.sampled_from([2, 16, 32, 64, 96]))
    def test_halving_width_only_refines(self, seed, width):
        rng = np.random.default_rng(seed)
        preds = rng.uniform(0, 255, (2, 200))
        coarse = partition_prediction(preds, BinSpace(width))
        fine = partition_prediction(preds, BinSpace(max(1, width // 2)))
        coarse_of = {}
        for key, pix in coarse.items():
            for p in pix:
                coarse_of[int(p)] = key
        for key, pix in fine.items():
            # Pixels sharing a fine key must share the coarse key.
            assert len({coarse_of[int(p)] for p in pix}) == 1
