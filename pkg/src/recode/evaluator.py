"""Full-catalog leave-one-out ranking metrics."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import user_repeat_ratios
from .numerics import no_grad

DEFAULT_KS = (50, 100)


def rank_of_truth(scores, truth):
    """1-based rank with ties counted against the truth item."""
    scores = np.asarray(scores)
    s = scores[truth]
    return int(np.count_nonzero(scores >= s))


def ranks_of_truth(score_matrix, truths):
    score_matrix = np.asarray(score_matrix)
    truth_scores = score_matrix[np.arange(len(truths)), truths]
    return np.count_nonzero(score_matrix >= truth_scores[:, None], axis=1)


def user_metrics(rank, k):
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if rank > k:
        return 0.0, 0.0
    return 1.0, float(1.0 / np.log2(rank + 1))


@dataclass
class RankMetrics:
    users: np.ndarray
    ranks: np.ndarray
    ks: tuple = DEFAULT_KS
    stratum: str = "overall"
    recall: dict = field(init=False)
    ndcg: dict = field(init=False)

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=np.int64)
        self.ranks = np.asarray(self.ranks, dtype=np.int64)
        self.ks = tuple(self.ks)
        self.recall, self.ndcg = {}, {}
        for k in self.ks:
            hit = self.ranks <= k
            gain = np.where(hit, 1.0 / np.log2(self.ranks + 1.0), 0.0)
            self.recall[k] = float(hit.mean()) if len(hit) else 0.0
            self.ndcg[k] = float(gain.mean()) if len(hit) else 0.0

    @property
    def n_users(self):
        return len(self.users)

    def per_user(self, k):
        hit = self.ranks <= k
        return hit.astype(float), np.where(hit, 1.0 / np.log2(self.ranks + 1.0), 0.0)

    def subset(self, mask, stratum):
        return RankMetrics(self.users[mask], self.ranks[mask], self.ks, stratum)

    def as_dict(self):
        return {"stratum": self.stratum, "n_users": self.n_users,
                "recall": {str(k): v for k, v in self.recall.items()},
                "ndcg": {str(k): v for k, v in self.ndcg.items()}}


def evaluate(model, split, which="test", ks=DEFAULT_KS, gap_index=None, batch_users=128, threads=1):
    """Rank every target against the whole catalog, scoring at the target's
    timestamp with gaps from all strictly earlier events.

    ``threads`` > 1 scores user chunks concurrently; each chunk writes only
    its own slice of the rank vector, so the result does not depend on it.
    """
    targets = split.targets(which)
    if not targets:
        raise ValueError(f"split has no {which} targets")
    gap_index = gap_index or model.gap_index(split.histories)
    users = np.array(sorted(targets), dtype=np.int64)
    ranks = np.empty(len(users), dtype=np.int64)

    def run(start):
        chunk = users[start:start + batch_users]
        pos = [targets[u] for u in chunk.tolist()]
        truths = np.array([split.histories[u].items[p] for u, p in zip(chunk.tolist(), pos)])
        times = [int(split.histories[u].timestamps[p]) for u, p in zip(chunk.tolist(), pos)]
        scores = model.score_all(chunk, times, gap_index)
        if not np.all(np.isfinite(scores)):
            raise FloatingPointError("non-finite scores during evaluation")
        ranks[start:start + len(chunk)] = ranks_of_truth(scores, truths)

    starts = range(0, len(users), batch_users)
    with no_grad():
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(run, starts))
        else:
            for start in starts:
                run(start)
    return RankMetrics(users, ranks, ks)


def default_threads():
    """Evaluation worker count from RECODE_THREADS (default 1)."""
    raw = os.environ.get("RECODE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"RECODE_THREADS must be an integer, got {raw!r}") from None


def repeat_ratio_strata(histories, users, n_buckets=4):
    """Label each user by the quantile bucket of their personal repeat ratio."""
    ratios = user_repeat_ratios(histories)[np.asarray(users)]
    edges = np.quantile(ratios, np.linspace(0, 1, n_buckets + 1))
    idx = np.clip(np.searchsorted(edges, ratios, side="right") - 1, 0, n_buckets - 1)
    labels = [f"q{b + 1}[{edges[b]:.3f},{edges[b + 1]:.3f}]" for b in range(n_buckets)]
    return idx, labels


def stratify(metrics: RankMetrics, histories, n_buckets=4):
    idx, labels = repeat_ratio_strata(histories, metrics.users, n_buckets)
    return [metrics.subset(idx == b, labels[b]) for b in range(n_buckets) if np.any(idx == b)]


def mean_std(values):
    """Mean and sample std across seeds (std is None for a single value)."""
    values = np.asarray(values, dtype=np.float64)
    std = float(values.std(ddof=1)) if len(values) > 1 else None
    return float(values.mean()), std
