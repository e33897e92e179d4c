"""Collapse and hierarchy diagnostics: entropy-based effective rank on
sample subsets, cosine-similarity distribution statistics split by
superclass, skewness tracking, and a cosine KNN probe."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (BadConfig, DegenerateDistribution, EmptyTrainSet,
                     InsufficientSamples, MissingLabels, ZeroMatrix)
from .linalg import as_matrix, row_norms, singular_values
from .rng import Rng

RANKME_EPS = 1e-7


@dataclass
class RankCurvePoint:
    epoch: int
    mean_rankme_superclass: float
    mean_rankme_random: float
    n_subsets: int
    subset_size: int


@dataclass
class DistributionStats:
    epoch: int
    space: str
    mean_super: Optional[float]
    mean_regular: Optional[float]
    skew_super: Optional[float]
    skew_regular: Optional[float]
    ratio: Optional[float]


def rankme(r, eps: float = RANKME_EPS) -> float:
    """Effective rank: exp of the entropy of the normalized singular-value
    distribution, each share perturbed by eps."""
    a = as_matrix(r)
    if eps <= 0.0:
        raise BadConfig(f"eps must be > 0, got {eps}")
    if not np.any(a):
        raise ZeroMatrix("effective rank of the zero matrix is undefined")
    sv = singular_values(a)
    total = sv.sum()
    if total <= 0.0:
        raise ZeroMatrix("singular values sum to zero")
    p = sv / total + eps
    return float(np.exp(-(p * np.log(p)).sum()))


def _draw(stream: Rng, pool: np.ndarray, size: int, replace: bool) -> np.ndarray:
    if replace:
        return pool[[stream.randbelow(pool.size) for _ in range(size)]]
    items = list(pool)
    stream.shuffle(items)
    return np.asarray(items[:size], dtype=np.intp)


def subset_rank_curve(representations, superclass_labels, n_subsets: int,
                      subset_size: int, seed: int,
                      allow_replacement: bool = False,
                      epoch: int = 0) -> RankCurvePoint:
    """Mean effective rank over subsets drawn (a) from one uniformly chosen
    superclass each and (b) uniformly from all samples."""
    a = as_matrix(representations)
    labels = np.asarray(superclass_labels)
    if labels.shape[0] != a.shape[0]:
        raise MissingLabels("one superclass label per row is required")
    if n_subsets < 1 or subset_size < 1:
        raise BadConfig("n_subsets and subset_size must be >= 1")
    if a.shape[0] < subset_size:
        raise InsufficientSamples(
            f"{a.shape[0]} samples cannot fill subsets of {subset_size}")
    supers = np.unique(labels)
    groups = [np.nonzero(labels == s)[0] for s in supers]
    smallest = min(g.size for g in groups)
    if smallest < subset_size and not allow_replacement:
        raise InsufficientSamples(
            f"smallest superclass has {smallest} < {subset_size} samples "
            "(pass allow_replacement to draw with replacement)")
    root = Rng.from_seed(seed)
    all_idx = np.arange(a.shape[0])
    super_vals = []
    random_vals = []
    for j in range(n_subsets):
        st = root.child(0).child(j)
        group = groups[st.randbelow(len(groups))]
        idx = _draw(st, group, subset_size, group.size < subset_size)
        super_vals.append(rankme(a[idx]))
        rt = root.child(1).child(j)
        idx = _draw(rt, all_idx, subset_size, False)
        random_vals.append(rankme(a[idx]))
    return RankCurvePoint(epoch, float(np.mean(super_vals)),
                          float(np.mean(random_vals)), n_subsets, subset_size)


def skewness(values) -> float:
    """Fisher-Pearson g1 = m3 / m2^(3/2) with population central moments."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 3:
        raise DegenerateDistribution(f"need >= 3 values, got {v.size}")
    d = v - v.mean()
    m2 = float((d * d).mean())
    if m2 <= 1e-15:
        raise DegenerateDistribution("variance below 1e-15")
    m3 = float((d ** 3).mean())
    return m3 / m2 ** 1.5


def _guarded_skew(pool: np.ndarray) -> Optional[float]:
    d = pool - pool.mean()
    if pool.size < 3 or float((d * d).mean()) <= 1e-15:
        return None
    return skewness(pool)


def distribution_stats(sims, superclass_labels, positive_index=None,
                       space_tag: str = "projection",
                       epoch: int = 0) -> DistributionStats:
    """Pool anchor-other similarities split by shared superclass (self and,
    when given, the paired positive excluded) and summarize each pool.

    Empty pools yield None statistics; constant pools yield means but None
    skews.
    """
    if space_tag not in ("projection", "representation"):
        raise BadConfig(f"unknown space tag {space_tag!r}")
    s = np.asarray(sims, dtype=np.float64)
    if superclass_labels is None:
        raise MissingLabels("superclass labels are required")
    labels = np.asarray(superclass_labels)
    n = s.shape[0]
    if labels.shape[0] != n:
        raise MissingLabels("one superclass label per row is required")
    eligible = ~np.eye(n, dtype=bool)
    if positive_index is not None:
        pos = np.asarray(positive_index, dtype=np.intp)
        eligible[np.arange(n), pos] = False
    same = labels[:, None] == labels[None, :]
    pool_super = s[eligible & same]
    pool_regular = s[eligible & ~same]
    mean_super = float(pool_super.mean()) if pool_super.size else None
    mean_regular = float(pool_regular.mean()) if pool_regular.size else None
    ratio = None
    if mean_super is not None and mean_regular is not None and mean_regular != 0.0:
        ratio = mean_super / mean_regular
    return DistributionStats(
        epoch=epoch, space=space_tag,
        mean_super=mean_super, mean_regular=mean_regular,
        skew_super=_guarded_skew(pool_super) if pool_super.size else None,
        skew_regular=_guarded_skew(pool_regular) if pool_regular.size else None,
        ratio=ratio)


def _safe_unit_rows(m: np.ndarray) -> np.ndarray:
    norms = row_norms(m)
    norms = np.where(norms > 1e-12, norms, 1.0)
    return m / norms[:, None]


def knn_accuracy(train_repr, train_labels, query_repr, query_labels,
                 k: int) -> float:
    """Fraction of queries whose majority label among the k most cosine-
    similar training rows matches. Vote ties break by summed similarity,
    then by smallest label id; neighbor ties break by lowest train index."""
    if np.asarray(train_repr).shape[0] == 0:
        raise EmptyTrainSet("no training rows")
    train = as_matrix(train_repr)
    query = as_matrix(query_repr)
    tl = np.asarray(train_labels)
    ql = np.asarray(query_labels)
    if tl.shape[0] != train.shape[0] or ql.shape[0] != query.shape[0]:
        raise MissingLabels("labels must match the row counts")
    if k < 1 or k > train.shape[0]:
        raise BadConfig(f"k must lie in [1, {train.shape[0]}], got {k}")
    sims = _safe_unit_rows(query) @ _safe_unit_rows(train).T
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    correct = 0
    for qi in range(query.shape[0]):
        neigh = order[qi]
        votes: dict = {}
        for t in neigh:
            lbl = tl[t]
            cnt, tot = votes.get(lbl, (0, 0.0))
            votes[lbl] = (cnt + 1, tot + sims[qi, t])
        winner = min(votes.items(), key=lambda kv: (-kv[1][0], -kv[1][1], kv[0]))[0]
        if winner == ql[qi]:
            correct += 1
    return correct / query.shape[0]
