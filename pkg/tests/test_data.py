import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recode.data import (SECONDS_PER_DAY, Exponential, Gaussian, Interaction, Mixture, SyntheticConfig,
                         build_histories, dataset_stats, generate_synthetic, ingest_tsv, leave_one_out,
                         read_canonical_tsv, repeat_ratio, user_repeat_ratios, write_tsv)


def write(tmp_path, text, name="log.tsv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_ingest_three_rows(tmp_path):
    res = ingest_tsv(write(tmp_path, "a\tx\t10\nb\ty\t5\na\ty\t7\n"))
    assert len(res.interactions) == 3
    assert res.num_users == 2 and res.num_items == 2
    assert [x.timestamp for x in res.interactions] == [10, 5, 7]  # file order kept


def test_ingest_bad_timestamp_names_line(tmp_path):
    with pytest.raises(ValueError, match="line 2"):
        ingest_tsv(write(tmp_path, "a\tx\t10\nb\ty\tnoon\n"))


def test_ingest_custom_columns_and_header(tmp_path):
    res = ingest_tsv(write(tmp_path, "ts\titem\tuser\n3\tq\tu1\n1\tr\tu2\n"),
                     user_col=2, item_col=1, time_col=0, header=True)
    assert res.user_ids == ["u1", "u2"] and res.item_ids == ["q", "r"]
    assert res.interactions[1] == Interaction(1, 1, 1)


def test_ingest_counts_duplicates_and_rejects_empty(tmp_path):
    res = ingest_tsv(write(tmp_path, "a\tx\t1\na\tx\t1\n"))
    assert len(res.interactions) == 2 and res.duplicates == 1
    with pytest.raises(ValueError):
        ingest_tsv(write(tmp_path, "\n", "empty.tsv"))


def test_canonical_round_trip(tmp_path):
    inter = [Interaction(0, 3, 10), Interaction(1, 0, 2)]
    write_tsv(inter, tmp_path / "c.tsv")
    assert read_canonical_tsv(tmp_path / "c.tsv") == inter


def test_histories_sorted_and_stable():
    inter = [Interaction(0, 1, 5), Interaction(0, 2, 1), Interaction(0, 3, 3),
             Interaction(1, 7, 4), Interaction(1, 8, 4), Interaction(2, 9, 0)]
    h = build_histories(inter)
    assert h[0].timestamps.tolist() == [1, 3, 5] and h[0].items.tolist() == [2, 3, 1]
    assert h[1].items.tolist() == [7, 8]
    assert len(h[2]) == 1


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 5), st.integers(0, 20)), min_size=1, max_size=40),
       st.randoms())
@settings(max_examples=50, deadline=None)
def test_histories_permutation_invariant(rows, rnd):
    inter = [Interaction(*r) for r in rows]
    shuffled = inter[:]
    rnd.shuffle(shuffled)
    a, b = build_histories(inter, 4), build_histories(shuffled, 4)
    for ha, hb in zip(a, b):
        np.testing.assert_array_equal(ha.timestamps, hb.timestamps)
        # same multiset of items at each timestamp
        assert sorted(ha.events) == sorted(hb.events)
    again = build_histories([Interaction(h.user_id, i, t) for h in a for i, t in h.events], 4)
    for ha, hc in zip(a, again):
        assert ha.events == hc.events


def _hist(n_events_per_user):
    inter = [Interaction(u, k, k) for u, n in enumerate(n_events_per_user) for k in range(n)]
    return build_histories(inter, len(n_events_per_user))


def test_leave_one_out_examples():
    split = leave_one_out(_hist([5, 2, 3]), num_items=5)
    train = {(u, p) for u, p in split.train_targets.tolist()}
    assert {p for u, p in train if u == 0} == {0, 1, 2}
    assert split.val_target[0] == 3 and split.test_target[0] == 4
    assert {p for u, p in train if u == 1} == {0, 1} and 1 not in split.val_target
    assert {p for u, p in train if u == 2} == {0}
    assert split.val_target[2] == 1 and split.test_target[2] == 2


@given(st.lists(st.integers(0, 8), min_size=1, max_size=10))
@settings(max_examples=50, deadline=None)
def test_leave_one_out_partitions_positions(lengths):
    split = leave_one_out(_hist(lengths), num_items=10)
    cells = [tuple(r) for r in split.train_targets.tolist()]
    cells += list(split.val_target.items()) + list(split.test_target.items())
    assert len(cells) == len(set(cells)) == sum(lengths)


def test_repeat_ratio_examples():
    assert repeat_ratio([Interaction(0, i, i) for i in range(5)]) == 0.0
    assert repeat_ratio([Interaction(0, 3, t) for t in range(4)]) == 0.75
    hist = build_histories([Interaction(0, 3, t) for t in range(4)] + [Interaction(1, 1, 0)])
    np.testing.assert_array_equal(user_repeat_ratios(hist), [0.75, 0.0])


def test_gap_process_validation():
    with pytest.raises(ValueError):
        Exponential(0.0)
    with pytest.raises(ValueError):
        Gaussian(1.0, 0.0)
    with pytest.raises(ValueError):
        Mixture(1.5, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        SyntheticConfig(repeat_prob=1.2)


def small(**kw):
    base = dict(num_users=50, num_items=1000, interactions_per_user=100, rng_seed=3)
    base.update(kw)
    return SyntheticConfig(**base)


def test_synthetic_no_repeats():
    assert repeat_ratio(generate_synthetic(small(repeat_prob=0.0))) == 0.0


def test_synthetic_catalog_exhaustion_forces_repeats():
    inter = generate_synthetic(small(num_users=2, num_items=5, interactions_per_user=20, repeat_prob=0.0))
    for h in build_histories(inter):
        assert sorted(set(h.items.tolist())) == list(range(5))


def test_synthetic_repeat_ratio_matches_prob():
    assert abs(repeat_ratio(generate_synthetic(small(repeat_prob=0.35))) - 0.35) <= 0.05


def test_synthetic_ratio_at_ten_thousand_events():
    for p in (0.1, 0.5):
        assert abs(repeat_ratio(generate_synthetic(small(num_users=100, repeat_prob=p))) - p) <= 0.05


def test_synthetic_deterministic_and_ordered(tmp_path):
    cfg = small(num_users=10, gap_process=Mixture(0.5, 0.5, 14.0, 3.0))
    a, b = generate_synthetic(cfg), generate_synthetic(cfg)
    write_tsv(a, tmp_path / "a.tsv")
    write_tsv(b, tmp_path / "b.tsv")
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
    for h in build_histories(a):
        assert len(h) == 100 and np.all(np.diff(h.timestamps) > 0)


def _repeat_gaps_days(inter):
    gaps = []
    for h in build_histories(inter):
        last = {}
        for i, t in h.events:
            if i in last:
                gaps.append((t - last[i]) / SECONDS_PER_DAY)
            last[i] = t
    return np.array(gaps)


def test_exponential_mean_gap_one_day():
    inter = generate_synthetic(small(num_users=300, repeat_prob=0.35, gap_process=Exponential(1.0)))
    gaps = _repeat_gaps_days(inter)
    assert len(gaps) >= 10_000
    assert abs(gaps.mean() - 1.0) <= 0.1


def test_gaussian_gaps_centered():
    inter = generate_synthetic(small(num_users=100, repeat_prob=0.5, gap_process=Gaussian(10.0, 1.0)))
    gaps = _repeat_gaps_days(inter)
    assert gaps.min() > 0
    assert abs(np.median(gaps) - 10.0) < 0.5


def test_dataset_stats():
    inter = [Interaction(0, 3, t) for t in range(4)] + [Interaction(1, 1, 0)]
    assert dataset_stats(inter) == {"users": 2, "items": 2, "interactions": 5, "repeat_ratio": 0.6}
