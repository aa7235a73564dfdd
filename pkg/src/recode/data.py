"""Interaction logs: ingestion, per-user histories, leave-one-out splits and
synthetic repeat-consumption generation."""

from __future__ import annotations

import csv
import heapq
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400


@dataclass(frozen=True)
class Interaction:
    user_id: int
    item_id: int
    timestamp: int


@dataclass
class IngestResult:
    interactions: list[Interaction]
    user_ids: list[str]  # dense index -> raw id
    item_ids: list[str]
    duplicates: int = 0

    @property
    def num_users(self):
        return len(self.user_ids)

    @property
    def num_items(self):
        return len(self.item_ids)


def _parse_timestamp(raw, lineno):
    try:
        ts = int(raw)
    except ValueError:
        try:
            val = float(raw)
        except ValueError:
            raise ValueError(f"line {lineno}: timestamp {raw!r} is not numeric") from None
        if not np.isfinite(val):
            raise ValueError(f"line {lineno}: timestamp {raw!r} is not finite")
        ts = int(val)
    if ts < 0:
        raise ValueError(f"line {lineno}: negative timestamp {ts}")
    return ts


def ingest_tsv(path, user_col=0, item_col=1, time_col=2, header=False) -> IngestResult:
    """Read a tab-separated log and densely re-index user/item ids.

    Rows are kept in file order; sorting happens per user in build_histories.
    Exact (user, item, timestamp) duplicates are kept and counted.
    """
    path = Path(path)
    user_index, item_index = {}, {}
    interactions = []
    seen, duplicates = set(), 0
    need = max(user_col, item_col, time_col) + 1
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        for lineno, row in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < need:
                raise ValueError(f"line {lineno}: expected at least {need} columns, got {len(row)}")
            u_raw, i_raw = row[user_col].strip(), row[item_col].strip()
            if not u_raw or not i_raw:
                raise ValueError(f"line {lineno}: empty user or item id")
            ts = _parse_timestamp(row[time_col].strip(), lineno)
            u = user_index.setdefault(u_raw, len(user_index))
            i = item_index.setdefault(i_raw, len(item_index))
            key = (u, i, ts)
            if key in seen:
                duplicates += 1
            seen.add(key)
            interactions.append(Interaction(u, i, ts))
    if not interactions:
        raise ValueError(f"{path}: no interactions found")
    if duplicates:
        log.info("%s: kept %d duplicate (user, item, timestamp) rows", path, duplicates)
    return IngestResult(interactions, list(user_index), list(item_index), duplicates)


def write_tsv(interactions, path):
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write("".join(f"{x.user_id}\t{x.item_id}\t{x.timestamp}\n" for x in interactions))


def read_canonical_tsv(path) -> list[Interaction]:
    """Read the user_id/item_id/timestamp form written by write_tsv, keeping ids as given."""
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: expected 3 columns")
            try:
                u, i = int(parts[0]), int(parts[1])
            except ValueError:
                raise ValueError(f"line {lineno}: non-integer id") from None
            out.append(Interaction(u, i, _parse_timestamp(parts[2], lineno)))
    if not out:
        raise ValueError(f"{path}: no interactions found")
    return out


@dataclass
class UserHistory:
    user_id: int
    items: np.ndarray  # int64, chronological
    timestamps: np.ndarray  # int64, non-decreasing

    def __len__(self):
        return len(self.items)

    @property
    def events(self):
        return list(zip(self.items.tolist(), self.timestamps.tolist()))


def build_histories(interactions, num_users=None) -> list[UserHistory]:
    """One chronologically sorted history per user (stable for equal timestamps)."""
    if num_users is None:
        num_users = 1 + max((x.user_id for x in interactions), default=-1)
    per_user = [[] for _ in range(num_users)]
    for x in interactions:
        per_user[x.user_id].append((x.item_id, x.timestamp))
    out = []
    for u, evs in enumerate(per_user):
        evs.sort(key=lambda e: e[1])  # list.sort is stable
        items = np.array([e[0] for e in evs], dtype=np.int64)
        times = np.array([e[1] for e in evs], dtype=np.int64)
        out.append(UserHistory(u, items, times))
    return out


@dataclass
class SplitDataset:
    histories: list[UserHistory]
    num_items: int
    train_targets: np.ndarray  # (n, 2) rows of (user, position)
    val_target: dict[int, int] = field(default_factory=dict)
    test_target: dict[int, int] = field(default_factory=dict)

    @property
    def num_users(self):
        return len(self.histories)

    def targets(self, which):
        if which == "val":
            return self.val_target
        if which == "test":
            return self.test_target
        raise ValueError(f"unknown split {which!r}")


def leave_one_out(histories, num_items=None) -> SplitDataset:
    """Last event -> test, second-last -> validation, rest -> train.
    Users with fewer than three events are train-only."""
    if num_items is None:
        num_items = 1 + max((int(h.items.max()) for h in histories if len(h)), default=-1)
    train, val, test = [], {}, {}
    for h in histories:
        n = len(h)
        if n < 3:
            train.extend((h.user_id, p) for p in range(n))
            continue
        train.extend((h.user_id, p) for p in range(n - 2))
        val[h.user_id] = n - 2
        test[h.user_id] = n - 1
    targets = np.array(train, dtype=np.int64).reshape(-1, 2)
    return SplitDataset(histories, num_items, targets, val, test)


def repeat_flags(history: UserHistory) -> np.ndarray:
    """True where the event's item already occurred earlier in the history."""
    seen, flags = set(), np.zeros(len(history), dtype=bool)
    for k, item in enumerate(history.items.tolist()):
        flags[k] = item in seen
        seen.add(item)
    return flags


def repeat_ratio(interactions) -> float:
    hists = build_histories(interactions)
    total = sum(len(h) for h in hists)
    if total == 0:
        return 0.0
    return sum(int(repeat_flags(h).sum()) for h in hists) / total


def user_repeat_ratios(histories) -> np.ndarray:
    return np.array([repeat_flags(h).mean() if len(h) else 0.0 for h in histories])


# synthetic generation


@dataclass
class Exponential:
    rate: float  # per day

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("Exponential rate must be > 0")

    def sample_days(self, rng):
        return rng.exponential(1.0 / self.rate)


@dataclass
class Gaussian:
    mean: float  # days
    std: float  # days

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError("Gaussian std must be > 0")

    def sample_days(self, rng):
        return rng.normal(self.mean, self.std)


@dataclass
class Mixture:
    weight: float  # probability of the exponential component
    rate: float
    mean: float
    std: float

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError("Mixture weight must be in [0, 1]")
        Exponential(self.rate)
        Gaussian(self.mean, self.std)

    def sample_days(self, rng):
        if rng.random() < self.weight:
            return rng.exponential(1.0 / self.rate)
        return rng.normal(self.mean, self.std)


GAP_PROCESSES = {"exponential": Exponential, "gaussian": Gaussian, "mixture": Mixture}


@dataclass
class SyntheticConfig:
    num_users: int = 500
    num_items: int = 1000
    interactions_per_user: int = 100
    repeat_prob: float = 0.35
    gap_process: Exponential | Gaussian | Mixture = field(default_factory=lambda: Exponential(1 / 7))
    popularity_exponent: float = 1.0
    novel_gap_days: float = 7.0  # novel arrivals are spaced U(1 s, this)
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_users < 1 or self.num_items < 1 or self.interactions_per_user < 1:
            raise ValueError("num_users, num_items and interactions_per_user must be >= 1")
        if not 0.0 <= self.repeat_prob <= 1.0:
            raise ValueError("repeat_prob must be in [0, 1]")
        if not isinstance(self.gap_process, (Exponential, Gaussian, Mixture)):
            raise ValueError(f"unsupported gap process {self.gap_process!r}")
        if self.popularity_exponent < 0:
            raise ValueError("popularity_exponent must be >= 0")
        if not self.novel_gap_days > 0:
            raise ValueError("novel_gap_days must be > 0")


def zipf_probs(num_items, exponent):
    w = 1.0 / np.arange(1, num_items + 1, dtype=np.float64) ** exponent
    return w / w.sum()


def _draw_novel(rng, probs, cdf, consumed, num_items):
    for _ in range(32):
        i = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), num_items - 1)
        if i not in consumed:
            return i
    rest = np.setdiff1d(np.arange(num_items), np.fromiter(consumed, dtype=np.int64))
    p = probs[rest] / probs[rest].sum()
    return int(rng.choice(rest, p=p))


def generate_synthetic(cfg: SyntheticConfig) -> list[Interaction]:
    """Repeat-consumption log with a controllable gap distribution.

    Per user, novel items arrive on a clock with U(1 s, novel_gap_days)
    spacing and are drawn from the Zipf popularity law among items the user
    has not consumed. Every consumption, novel or repeat, schedules one
    re-consumption of the same item with probability ``repeat_prob``, a gap
    drawn from ``gap_process`` later (Gaussian draws truncated at 1 s). Each
    item's consumptions therefore form a chain whose successive gaps are
    exact draws, and the fraction of repeat events tends to ``repeat_prob``.
    Events are emitted in time order until ``interactions_per_user`` is
    reached; ties are pushed forward one second.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    probs = zipf_probs(cfg.num_items, cfg.popularity_exponent)
    cdf = np.cumsum(probs)
    novel_max = max(int(cfg.novel_gap_days * SECONDS_PER_DAY), 1)
    out = []
    for u in range(cfg.num_users):
        pending: list[tuple[int, int, int]] = []  # (time, seq, item)
        consumed: set[int] = set()
        consumed_list: list[int] = []
        next_novel = int(rng.integers(1, novel_max + 1))
        prev, seq = -1, 0
        for _ in range(cfg.interactions_per_user):
            if pending and pending[0][0] <= next_novel:
                ts, _, item = heapq.heappop(pending)
            else:
                ts = next_novel
                if len(consumed_list) == cfg.num_items:
                    # catalog exhausted: forced re-consumption
                    item = consumed_list[int(rng.integers(len(consumed_list)))]
                else:
                    item = _draw_novel(rng, probs, cdf, consumed, cfg.num_items)
                    consumed.add(item)
                    consumed_list.append(item)
                next_novel += int(rng.integers(1, novel_max + 1))
            ts = max(ts, prev + 1)
            out.append(Interaction(u, item, ts))
            prev = ts
            if rng.random() < cfg.repeat_prob:
                gap = max(int(round(cfg.gap_process.sample_days(rng) * SECONDS_PER_DAY)), 1)
                heapq.heappush(pending, (ts + gap, seq, item))
                seq += 1
    return out


def dataset_stats(interactions, num_users=None, num_items=None):
    users = num_users if num_users is not None else len({x.user_id for x in interactions})
    items = num_items if num_items is not None else len({x.item_id for x in interactions})
    return {
        "users": users,
        "items": items,
        "interactions": len(interactions),
        "repeat_ratio": repeat_ratio(interactions),
    }
