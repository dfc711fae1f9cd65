import numpy as np
import pytest

from abscov.gridmap import (DegenerateFeatureError, FeatureNiche, OverlapError,
                            binary_mask, feature_of, pairwise_distance_stats,
                            quantize, quantize_weighted, sequence_to_counts,
                            to_positions, to_sequence)


class TestQuantize:
    def test_two_cells_9x9(self):
        # grid cells (3,3) and (7,6), 1-based, on a 900 m side
        pos = np.array([[250.0, 250.0], [550.0, 650.0]])
        pat = quantize(pos, 9, 900.0, "abs")
        nz = set(zip(*np.nonzero(pat.counts)))
        assert nz == {(2, 2), (6, 5)}
        assert np.array_equal(np.array([21, 60]), to_sequence(pat))

    def test_empty(self):
        assert quantize([], 8, 100.0).counts.sum() == 0

    def test_concentration(self):
        pos = np.tile([10.0, 10.0], (17, 1))
        pat = quantize(pos, 8, 100.0)
        assert pat.counts.max() == 17 and pat.counts.sum() == 17

    def test_boundary_closed(self):
        pat = quantize([[100.0, 100.0]], 8, 100.0)
        assert pat.counts[7, 7] == 1

    def test_conserves_count(self):
        rng = np.random.default_rng(0)
        pos = rng.uniform(0, 100, (57, 2))
        assert quantize(pos, 16, 100.0).counts.sum() == 57

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        pos = rng.uniform(0, 100, (30, 2))
        a = quantize(pos, 12, 100.0).counts
        b = quantize(pos[rng.permutation(30)], 12, 100.0).counts
        assert np.array_equal(a, b)

    def test_shape_depends_only_on_k(self):
        assert quantize(np.zeros((3, 2)), 5, 100.0).counts.shape == (5, 5)
        assert quantize(np.zeros((40, 2)), 5, 100.0).counts.shape == (5, 5)


class TestSequences:
    def test_corner_cell_is_one(self):
        pat = quantize([[0.5, 0.5]], 64, 1000.0, "abs")
        assert to_sequence(pat).tolist() == [1]

    def test_round_trip(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            seq = np.sort(rng.choice(64 * 64, size=5, replace=False) + 1)
            pos = to_positions(seq, 64, 1000.0)
            back = to_sequence(pos, 64, 1000.0)
            assert np.array_equal(back, seq)

    def test_overlap_error(self):
        pos = np.array([[10.0, 10.0], [10.5, 10.5]])
        with pytest.raises(OverlapError):
            to_sequence(pos, 8, 100.0)
        with pytest.raises(OverlapError):
            to_positions([3, 3], 8, 100.0)

    def test_positions_are_cell_centers(self):
        pos = to_positions([1, 64 * 64], 64, 1000.0)
        cell = 1000.0 / 64
        assert np.allclose(pos[0], [cell / 2, cell / 2])
        assert np.allclose(pos[1], [1000 - cell / 2, 1000 - cell / 2])

    def test_sequence_to_counts(self):
        counts = sequence_to_counts([21, 60], 9)
        assert counts[2, 2] == 1 and counts[6, 5] == 1 and counts.sum() == 2


class TestBinaryMask:
    def test_example(self):
        assert np.array_equal(binary_mask(np.array([[0, 2], [1, 0]])),
                              [[0, 1], [1, 0]])

    def test_all_zero(self):
        assert binary_mask(np.zeros((4, 4), dtype=int)).sum() == 0

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        counts = rng.integers(0, 4, (8, 8))
        m = binary_mask(counts)
        assert np.array_equal(binary_mask(m), m)

    def test_weighted_quantize_consistent(self):
        rng = np.random.default_rng(4)
        pos = rng.uniform(0, 100, (25, 2))
        w = rng.integers(0, 2, 25)
        cgu = quantize_weighted(pos, w, 10, 100.0).counts
        gu = quantize(pos, 10, 100.0).counts
        assert (cgu <= gu).all()


class TestFeature:
    def test_single_pair(self):
        mu, sigma = pairwise_distance_stats([[0.0, 0.0], [300.0, 400.0]])
        assert mu == pytest.approx(500.0)
        assert sigma == 0.0

    def test_equilateral(self):
        side = 7.0
        pts = [[0, 0], [side, 0], [side / 2, side * np.sqrt(3) / 2]]
        mu, sigma = pairwise_distance_stats(pts)
        assert mu == pytest.approx(side)
        assert sigma == pytest.approx(0.0, abs=1e-9)

    def test_bins(self):
        # centers (50,50) and (350,450): distance exactly 500
        niche = feature_of([1, 44], 10, 1000.0, 15.625)
        assert niche == FeatureNiche(32, 0)

    def test_reorder_invariant(self):
        rng = np.random.default_rng(5)
        seq = np.sort(rng.choice(256, 5, replace=False) + 1)
        a = feature_of(seq, 16, 1000.0, 20.0)
        b = feature_of(seq[::-1].copy(), 16, 1000.0, 20.0)
        assert a == b

    def test_degenerate(self):
        with pytest.raises(DegenerateFeatureError):
            feature_of([5], 16, 1000.0, 20.0)
