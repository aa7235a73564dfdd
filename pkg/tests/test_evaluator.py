import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import RandomScorer, toy_split
from recode.data import SyntheticConfig, build_histories, generate_synthetic, leave_one_out
from recode.evaluator import (RankMetrics, evaluate, mean_std, rank_of_truth, ranks_of_truth, stratify,
                              user_metrics)
from recode.model import ModelConfig, RecodeModel


def brute_rank(scores, truth):
    # stable sort with the truth placed after every tie
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], j == truth))
    return order.index(truth) + 1


def test_rank_examples():
    assert rank_of_truth([0.1, 0.9, 0.3], 1) == 1
    assert rank_of_truth(np.zeros(100), 37) == 100


def test_rank_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        scores = rng.integers(0, 8, size=n).astype(float)  # many ties
        t = int(rng.integers(n))
        assert rank_of_truth(scores, t) == brute_rank(scores.tolist(), t)


def test_vectorized_ranks_match_scalar():
    rng = np.random.default_rng(1)
    m = rng.normal(size=(20, 30)).round(1)
    truths = rng.integers(0, 30, size=20)
    assert ranks_of_truth(m, truths).tolist() == [rank_of_truth(m[r], t) for r, t in enumerate(truths)]


def test_user_metrics_examples():
    assert user_metrics(1, 50) == (1.0, 1.0)
    rec, ndcg = user_metrics(2, 50)
    assert rec == 1.0 and ndcg == pytest.approx(1 / math.log2(3)) and ndcg == pytest.approx(0.6309, abs=1e-4)
    assert user_metrics(51, 50) == (0.0, 0.0)
    with pytest.raises(ValueError):
        user_metrics(0, 50)


@given(st.lists(st.integers(1, 300), min_size=1, max_size=50))
@settings(max_examples=50, deadline=None)
def test_metrics_bounded_and_monotone_in_k(ranks):
    m = RankMetrics(np.arange(len(ranks)), ranks, (50, 100))
    for k in (50, 100):
        assert 0.0 <= m.recall[k] <= 1.0 and 0.0 <= m.ndcg[k] <= 1.0
        exp = np.mean([user_metrics(r, k) for r in ranks], axis=0)
        assert m.recall[k] == pytest.approx(exp[0]) and m.ndcg[k] == pytest.approx(exp[1])
    assert m.recall[100] >= m.recall[50] and m.ndcg[100] >= m.ndcg[50]
    r50, n50 = m.per_user(50)
    r100, n100 = m.per_user(100)
    assert np.all(r100 >= r50) and np.all(n100 >= n50)


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_rank_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=50).round(2)
    t = int(rng.integers(50))
    assert rank_of_truth(s, t) == rank_of_truth(np.exp(3 * s) + 7, t)


def test_random_scorer_recall_near_k_over_m():
    split = toy_split(num_users=3000, num_items=1000)
    m = evaluate(RandomScorer(1000), split, "test")
    assert m.n_users == 3000
    assert abs(m.recall[50] - 0.05) <= 0.01
    assert abs(m.recall[100] - 0.10) <= 0.015


def synthetic_split():
    cfg = SyntheticConfig(num_users=60, num_items=200, interactions_per_user=40, repeat_prob=0.5, rng_seed=1)
    return leave_one_out(build_histories(generate_synthetic(cfg), 60), 200)


def test_batched_scores_match_looped_fused_score():
    split = synthetic_split()
    model = RecodeModel(split.num_users, split.num_items, ModelConfig(dim=8), seed=0)
    idx = model.gap_index(split.histories)
    users = np.array(sorted(split.test_target))[:6]
    times = [int(split.histories[u].timestamps[split.test_target[u]]) for u in users]
    full = model.score_all(users, times, idx)
    rng = np.random.default_rng(2)
    for r, (u, t) in enumerate(zip(users, times)):
        prior = idx.prior_items(int(u), t)
        for i in list(rng.choice(200, 10, replace=False)) + prior[:10]:
            assert abs(full[r, i] - model.fused_score(int(u), int(i), t, idx)) <= 1e-9


def test_evaluate_deterministic_and_stratified():
    split = synthetic_split()
    model = RecodeModel(split.num_users, split.num_items, ModelConfig(dim=8), seed=0)
    a, b = evaluate(model, split), evaluate(model, split)
    np.testing.assert_array_equal(a.ranks, b.ranks)
    strata = stratify(a, split.histories, 4)
    assert sum(s.n_users for s in strata) == a.n_users
    assert all(s.stratum.startswith("q") for s in strata)


def test_repeat_oracle_beats_popularity():
    cfg = SyntheticConfig(num_users=200, num_items=1000, interactions_per_user=60, repeat_prob=1.0, rng_seed=2)
    split = leave_one_out(build_histories(generate_synthetic(cfg), 200), 1000)
    counts = np.bincount(np.concatenate([h.items[:-1] for h in split.histories]), minlength=1000)

    class Popularity:
        def gap_index(self, histories):
            return None

        def score_all(self, users, times, gap_index):
            return np.tile(counts.astype(float), (len(users), 1))

    class RepeatOracle:
        """Scores an item by the recency of its latest prior consumption."""

        def gap_index(self, histories):
            return None

        def score_all(self, users, times, gap_index):
            out = np.full((len(users), 1000), -np.inf)
            for r, (u, t) in enumerate(zip(users, times)):
                h = split.histories[u]
                keep = h.timestamps < t
                out[r, h.items[keep]] = h.timestamps[keep] - t
            return np.where(np.isinf(out), -1e18, out)

    pop = evaluate(Popularity(), split).recall[50]
    oracle = evaluate(RepeatOracle(), split).recall[50]
    assert oracle > pop + 0.3


def test_evaluate_without_targets_errors():
    split = toy_split(num_users=3, num_items=5, n_events=2)
    with pytest.raises(ValueError):
        evaluate(RandomScorer(5), split)


def test_mean_std():
    assert mean_std([0.3]) == (0.3, None)
    m, s = mean_std([1.0, 2.0, 3.0])
    assert m == 2.0 and s == pytest.approx(1.0)


def test_threaded_evaluation_matches_serial(monkeypatch):
    split = synthetic_split()
    model = RecodeModel(split.num_users, split.num_items, ModelConfig(dim=8), seed=0)
    serial = evaluate(model, split, batch_users=7)
    threaded = evaluate(model, split, batch_users=7, threads=3)
    np.testing.assert_array_equal(serial.ranks, threaded.ranks)
    from recode.evaluator import default_threads
    monkeypatch.setenv("RECODE_THREADS", "4")
    assert default_threads() == 4
    monkeypatch.setenv("RECODE_THREADS", "many")
    with pytest.raises(ValueError):
        default_threads()
