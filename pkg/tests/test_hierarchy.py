import numpy as np
import pytest

from hexreg.errors import MissingLabels
from hexreg.hierarchy import (HierarchyMask, mask_quality, supervised_mask,
                              threshold_mask, whole_batch_mask)
from hexreg.linalg import cosine_sim_matrix, l2_normalize_rows


def _pairing(n):
    half = n // 2
    idx = np.arange(n)
    return np.where(idx < half, idx + half, idx - half)


def _random_sims(rng, n):
    z = l2_normalize_rows(rng.normal(size=(n, 6)))
    return cosine_sim_matrix(z)


class TestThresholdMask:
    def test_threshold_above_range_is_empty(self):
        sims = _random_sims(np.random.default_rng(0), 8)
        m = threshold_mask(sims, 1.0, _pairing(8))
        assert not m.membership.any()

    def test_threshold_below_range_is_full(self):
        sims = _random_sims(np.random.default_rng(1), 8)
        m = threshold_mask(sims, -1.0, _pairing(8))
        assert m.membership.sum() == 8 * 6  # all but self and positive

    def test_positive_excluded_even_above_threshold(self):
        sims = np.array([
            [1.0, 0.92, 0.40, 0.95],
            [0.92, 1.0, 0.1, 0.2],
            [0.40, 0.1, 1.0, 0.3],
            [0.95, 0.2, 0.3, 1.0],
        ])
        pos = np.array([3, 2, 1, 0])
        m = threshold_mask(sims, 0.9, pos)
        assert list(np.nonzero(m.membership[0])[0]) == [1]

    def test_strict_inequality(self):
        sims = np.full((4, 4), 0.5)
        np.fill_diagonal(sims, 1.0)
        m = threshold_mask(sims, 0.5, _pairing(4))
        assert not m.membership.any()

    def test_monotone_in_epsilon(self):
        rng = np.random.default_rng(4)
        sims = _random_sims(rng, 12)
        pos = _pairing(12)
        for _ in range(20):
            e1, e2 = sorted(rng.uniform(-1, 1, size=2))
            m1 = threshold_mask(sims, e1, pos).membership
            m2 = threshold_mask(sims, e2, pos).membership
            assert not (m2 & ~m1).any()


class TestSupervisedMask:
    def test_single_superclass_full(self):
        m = supervised_mask([0, 0, 0, 0], _pairing(4))
        assert m.membership.sum() == 4 * 2

    def test_all_distinct_empty(self):
        m = supervised_mask([0, 1, 2, 3], _pairing(4))
        assert not m.membership.any()

    def test_paired_views_share_source_label(self):
        # two samples of superclass A, two of B; rows = both views
        labels = np.array([0, 0, 1, 1])
        pos = _pairing(4)
        m = supervised_mask(labels, pos)
        assert list(np.nonzero(m.membership[0])[0]) == [1]
        assert list(np.nonzero(m.membership[2])[0]) == [3]

    def test_symmetry_across_same_superclass(self):
        rng = np.random.default_rng(9)
        labels = rng.integers(0, 3, size=16)
        m = supervised_mask(labels, _pairing(16)).membership
        for i in range(16):
            for a in range(16):
                if m[i, a]:
                    # reverse membership unless blocked by the pairing
                    assert m[a, i] or _pairing(16)[a] == i

    def test_missing_labels(self):
        with pytest.raises(MissingLabels):
            supervised_mask(None, _pairing(4))


class TestWholeBatchMask:
    @pytest.mark.parametrize("n,expected", [(4, 2), (2, 0), (6, 4)])
    def test_sizes(self, n, expected):
        m = whole_batch_mask(n, _pairing(n))
        assert (m.membership.sum(axis=1) == expected).all()
        assert m.source == "all"


class TestNoSelfNoPositive:
    def test_every_source(self):
        rng = np.random.default_rng(2)
        n = 10
        pos = _pairing(n)
        sims = _random_sims(rng, n)
        labels = rng.integers(0, 2, size=n)
        masks = [threshold_mask(sims, -0.5, pos),
                 supervised_mask(labels, pos),
                 whole_batch_mask(n, pos)]
        for m in masks:
            assert not m.membership[np.arange(n), np.arange(n)].any()
            assert not m.membership[np.arange(n), pos].any()


class TestMaskQuality:
    def test_perfect_estimate(self):
        labels = np.array([0, 0, 1, 0, 0, 1])
        pos = _pairing(6)
        est = supervised_mask(labels, pos)
        q = mask_quality(est, labels)
        assert q.precision == 1.0 and q.recall == 1.0

    def test_vacuous_precision(self):
        labels = np.array([0, 0, 0, 0])
        pos = _pairing(4)
        sims = np.zeros((4, 4))
        est = threshold_mask(sims, 1.0, pos)
        q = mask_quality(est, labels)
        assert q.precision == 1.0
        assert q.recall == 0.0
        assert q.mean_mask_size == 0.0

    def test_counting(self):
        # rows 0..2 share a superclass, truth pairs: (0,2),(1,2),(2,0),(2,1)
        labels = np.array([0, 0, 0, 1])
        pos = np.array([1, 0, 3, 2])
        est = np.zeros((4, 4), dtype=bool)
        est[0, 2] = True                  # TP
        est[2, 0] = True                  # TP
        est[0, 3] = True                  # FP (different superclass)
        mask = HierarchyMask(est, "adaptive", pos, 0.5)
        q = mask_quality(mask, labels)
        assert q.precision == pytest.approx(2 / 3)
        assert q.recall == pytest.approx(2 / 4)
        assert q.mean_mask_size == pytest.approx(3 / 4)
