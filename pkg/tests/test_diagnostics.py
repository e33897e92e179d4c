import numpy as np
import pytest

from hexreg.diagnostics import (DistributionStats, RankCurvePoint,
                                distribution_stats, knn_accuracy, rankme,
                                skewness, subset_rank_curve)
from hexreg.errors import (BadConfig, DegenerateDistribution, EmptyTrainSet,
                           InsufficientSamples, ZeroMatrix)
from hexreg.linalg import l2_normalize_rows


def rankme_oracle(m, eps=1e-7):
    """Independent route: LAPACK spectrum + the entropy formula."""
    sv = np.sqrt(np.maximum(np.linalg.eigvalsh(m.T @ m), 0.0))[::-1]
    p = sv / sv.sum() + eps
    return float(np.exp(-(p * np.log(p)).sum()))


class TestRankme:
    def test_uniform_spectrum(self):
        m = np.zeros((8, 4))
        m[:4, :4] = np.eye(4) * 2.5
        val = rankme(m)
        assert 3.95 <= val <= 4.05

    def test_rank_one(self):
        m = np.outer(np.arange(1.0, 6.0), np.ones(4))
        assert 0.99 <= rankme(m) <= 1.05

    def test_seeded_vs_independent_implementation(self):
        rng = np.random.default_rng(50)
        m = rng.normal(size=(50, 8))
        assert rankme(m) == pytest.approx(rankme_oracle(m), abs=1e-6)

    def test_zero_matrix(self):
        with pytest.raises(ZeroMatrix):
            rankme(np.zeros((4, 4)))

    def test_invariances(self):
        rng = np.random.default_rng(51)
        m = rng.normal(size=(20, 6))
        base = rankme(m)
        perm = rng.permutation(20)
        assert rankme(m[perm]) == pytest.approx(base, abs=1e-6)
        assert rankme(3.7 * m) == pytest.approx(base, abs=1e-6)

    def test_bounds(self):
        rng = np.random.default_rng(52)
        for shape in [(10, 3), (5, 9), (12, 12)]:
            val = rankme(rng.normal(size=shape))
            assert 1.0 <= val <= min(shape) + 0.05


class TestSubsetRankCurve:
    def _block_data(self):
        # each superclass occupies its own orthogonal coordinate block
        rng = np.random.default_rng(53)
        n_per, dim = 60, 12
        x = np.zeros((3 * n_per, dim))
        labels = np.repeat([0, 1, 2], n_per)
        for s in range(3):
            x[labels == s, 4 * s:4 * (s + 1)] = rng.normal(size=(n_per, 4))
        return x, labels

    def test_block_structure_lowers_superclass_rank(self):
        x, labels = self._block_data()
        pt = subset_rank_curve(x, labels, n_subsets=6, subset_size=30, seed=1)
        assert pt.mean_rankme_superclass < pt.mean_rankme_random

    def test_identical_rows(self):
        x = np.tile(np.arange(1.0, 5.0), (40, 1))
        labels = np.repeat([0, 1], 20)
        pt = subset_rank_curve(x, labels, n_subsets=4, subset_size=10, seed=2)
        assert pt.mean_rankme_superclass == pytest.approx(1.0, abs=0.01)
        assert pt.mean_rankme_random == pytest.approx(1.0, abs=0.01)

    def test_deterministic_under_seed(self):
        x, labels = self._block_data()
        a = subset_rank_curve(x, labels, 5, 25, seed=7)
        b = subset_rank_curve(x, labels, 5, 25, seed=7)
        assert a == b

    def test_insufficient_samples(self):
        x = np.random.default_rng(0).normal(size=(20, 3))
        labels = np.repeat([0, 1], 10)
        with pytest.raises(InsufficientSamples):
            subset_rank_curve(x, labels, 3, 15, seed=0)

    def test_replacement_opt_in(self):
        x = np.random.default_rng(1).normal(size=(20, 3))
        labels = np.repeat([0, 1], 10)
        pt = subset_rank_curve(x, labels, 3, 15, seed=0, allow_replacement=True)
        assert isinstance(pt, RankCurvePoint)


class TestSkewness:
    def test_symmetric_sample(self):
        assert skewness([-1.0, 0.0, 1.0]) == pytest.approx(0.0, abs=1e-15)

    def test_hand_computed_moments(self):
        assert skewness([0.0, 0.0, 3.0]) == pytest.approx(2.0 / 2.0 ** 1.5, abs=1e-12)

    def test_constant(self):
        with pytest.raises(DegenerateDistribution):
            skewness([1.0, 1.0, 1.0])

    def test_too_few(self):
        with pytest.raises(DegenerateDistribution):
            skewness([1.0, 2.0])

    def test_translation_and_scale_invariance(self):
        rng = np.random.default_rng(54)
        v = rng.exponential(size=300)
        base = skewness(v)
        assert skewness(v + 17.3) == pytest.approx(base, abs=1e-10)
        assert skewness(v * 41.0) == pytest.approx(base, abs=1e-10)


class TestDistributionStats:
    def test_all_same_superclass(self):
        sims = np.full((4, 4), 0.5)
        np.fill_diagonal(sims, 1.0)
        st = distribution_stats(sims, [0, 0, 0, 0])
        assert st.mean_regular is None
        assert st.ratio is None
        assert st.mean_super == pytest.approx(0.5)

    def test_block_structured_ratio(self):
        n = 6
        labels = np.repeat([0, 1], 3)
        same = labels[:, None] == labels[None, :]
        sims = np.where(same, 0.9, 0.1)
        np.fill_diagonal(sims, 1.0)
        st = distribution_stats(sims, labels)
        assert st.mean_super == pytest.approx(0.9)
        assert st.mean_regular == pytest.approx(0.1)
        assert st.ratio == pytest.approx(9.0)
        assert st.skew_super is None       # constant pools have no skew

    def test_symmetric_pools_zero_skew(self):
        labels = np.repeat([0, 1], 4)
        rng = np.random.default_rng(55)
        sims = np.zeros((8, 8))
        same = labels[:, None] == labels[None, :]
        vals = np.array([-0.2, -0.1, 0.1, 0.2] * 10)
        sims[same] = vals[:same.sum()]
        st = distribution_stats(sims, labels)
        assert st.skew_super == pytest.approx(0.0, abs=1e-12)

    def test_positive_excluded(self):
        labels = np.array([0, 0, 0, 0])
        pos = np.array([1, 0, 3, 2])
        sims = np.full((4, 4), 0.2)
        sims[0, 1] = sims[1, 0] = 0.99   # anchor-positive pair
        np.fill_diagonal(sims, 1.0)
        st = distribution_stats(sims, labels, positive_index=pos)
        assert st.mean_super == pytest.approx(0.2)


class TestKnnAccuracy:
    def test_exact_duplicates(self):
        train = np.eye(4)
        labels = np.array([0, 1, 2, 3])
        acc = knn_accuracy(train, labels, train.copy(), labels, k=1)
        assert acc == 1.0

    def test_k_exceeds_train(self):
        with pytest.raises(BadConfig):
            knn_accuracy(np.eye(3), [0, 1, 2], np.eye(3), [0, 1, 2], k=4)

    def test_empty_train(self):
        with pytest.raises(EmptyTrainSet):
            knn_accuracy(np.zeros((0, 3)), [], np.eye(3), [0, 1, 2], k=1)

    def test_chance_level_with_random_labels(self):
        # all-orthogonal representations: every vote ties, deterministic
        # tie-breaks select a label uncorrelated with the query's
        rng = np.random.default_rng(56)
        n_classes = 4
        hits = []
        train = np.eye(8)
        query = np.eye(8)
        for _ in range(1500):
            tl = rng.integers(0, n_classes, size=8)
            ql = rng.integers(0, n_classes, size=8)
            hits.append(knn_accuracy(train, tl, query, ql, k=1))
        assert np.mean(hits) == pytest.approx(1.0 / n_classes, abs=0.05)

    def test_majority_vote_and_similarity_tiebreak(self):
        train = np.array([[1.0, 0.0], [0.99, np.sqrt(1 - 0.99 ** 2)],
                          [0.8, 0.6], [0.0, 1.0]])
        labels = np.array([0, 0, 1, 1])
        # k=3 -> two votes for 0, one for 1
        acc = knn_accuracy(train, labels, np.array([[1.0, 0.0]]), [0], k=3)
        assert acc == 1.0

    def test_deterministic(self):
        rng = np.random.default_rng(57)
        train = l2_normalize_rows(rng.normal(size=(30, 5)))
        labels = rng.integers(0, 3, size=30)
        query = l2_normalize_rows(rng.normal(size=(10, 5)))
        ql = rng.integers(0, 3, size=10)
        a = knn_accuracy(train, labels, query, ql, k=5)
        b = knn_accuracy(train, labels, query, ql, k=5)
        assert a == b
        assert 0.0 <= a <= 1.0
