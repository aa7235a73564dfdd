"""Pairwise ranking training with Adam, uniform negatives and early stopping.

RNG protocol (fixed so runs are reproducible and can be replayed by an
independent implementation): the seed spawns two streams, the first
initializes the model, the second drives training. Each epoch draws one
permutation of the train targets, then for each batch in order draws the
negatives by vectorized rejection sampling.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evaluator import evaluate
from .model import ModelConfig, RecodeModel
from .numerics import backward, take_rows

log = logging.getLogger(__name__)

LR_GRID = (1e-3, 5e-4, 1e-4, 5e-5, 1e-5)
WD_GRID = (1e-5, 1e-6, 1e-7)
NEGATIVE_MODES = ("unconsumed", "not_target")
LOG_FIELDS = ("epoch", "train_loss", "val_recall@50", "val_ndcg@50", "wall_time")


@dataclass
class TrainConfig:
    batch_size: int = 512
    learning_rate: float = 1e-3
    weight_decay: float = 1e-6
    max_epochs: int = 100
    patience: int = 10
    rng_seed: int = 0
    audit_gaps: bool = False
    # "not_target": uniform over the catalog minus the positive, so stale
    # consumed items can serve as negatives; "unconsumed": never in the history
    negatives: str = "not_target"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.negatives not in NEGATIVE_MODES:
            raise ValueError(f"negatives must be one of {NEGATIVE_MODES}")


def seed_streams(seed):
    init_ss, train_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(train_ss)


# negatives


def sample_negative(consumed, num_items, rng):
    """One item uniformly from those not in ``consumed``."""
    if len(consumed) >= num_items:
        raise ValueError("user has consumed the whole catalog; no negative exists")
    while True:
        i = int(rng.integers(num_items))
        if i not in consumed:
            return i


class ConsumedIndex:
    """Sorted (user * num_items + item) codes for vectorized membership."""

    def __init__(self, histories, num_items):
        self.num_items = num_items
        codes = [h.user_id * num_items + np.unique(h.items) for h in histories if len(h)]
        self.codes = np.unique(np.concatenate(codes)) if codes else np.empty(0, dtype=np.int64)
        counts = np.zeros(len(histories), dtype=np.int64)
        for h in histories:
            counts[h.user_id] = len(np.unique(h.items))
        self.full = counts >= num_items

    def contains(self, users, items):
        q = np.asarray(users, dtype=np.int64) * self.num_items + np.asarray(items, dtype=np.int64)
        pos = np.searchsorted(self.codes, q)
        pos = np.minimum(pos, len(self.codes) - 1)
        return self.codes[pos] == q if len(self.codes) else np.zeros(len(q), dtype=bool)


def sample_negatives(users, consumed: ConsumedIndex, rng):
    users = np.asarray(users, dtype=np.int64)
    if np.any(consumed.full[users]):
        bad = np.unique(users[consumed.full[users]])
        raise ValueError(f"users {bad.tolist()} consumed the whole catalog; no negative exists")
    neg = rng.integers(consumed.num_items, size=len(users))
    redo = consumed.contains(users, neg)
    while np.any(redo):
        neg[redo] = rng.integers(consumed.num_items, size=int(redo.sum()))
        redo[redo] = consumed.contains(users[redo], neg[redo])
    return neg


@dataclass
class Batch:
    users: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    times: np.ndarray


def sample_other(positives, num_items, rng):
    """Uniform over the catalog minus the positive item of each pair."""
    neg = rng.integers(num_items - 1, size=len(positives))
    return neg + (neg >= positives)


def epoch_batches(split, batch_size, consumed: ConsumedIndex, rng, negatives="not_target"):
    targets = split.train_targets
    order = rng.permutation(len(targets))
    for start in range(0, len(order), batch_size):
        rows = targets[order[start:start + batch_size]]
        users = rows[:, 0]
        pos = np.array([split.histories[u].items[p] for u, p in rows.tolist()], dtype=np.int64)
        times = np.array([split.histories[u].timestamps[p] for u, p in rows.tolist()], dtype=np.int64)
        if negatives == "unconsumed":
            neg = sample_negatives(users, consumed, rng)
        else:
            neg = sample_other(pos, consumed.num_items, rng)
        yield Batch(users, pos, neg, times)


# loss and optimizer


def bpr_loss(pos, neg):
    """Sum over pairs of -log sigmoid(pos - neg), written as softplus(neg - pos)."""
    return (neg - pos).softplus().sum()


def bpr_loss_value(pos, neg):
    x = np.asarray(neg, dtype=np.float64) - np.asarray(pos, dtype=np.float64)
    return float(np.sum(np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))))


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState, lr, weight_decay=0.0):
    """In-place Adam update with bias correction. Weight decay is added to
    the gradient (L2 form, not decoupled)."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if weight_decay:
            g = g + weight_decay * p
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# training loop


@dataclass
class TrainResult:
    model: RecodeModel
    log: list
    batch_losses: list
    best_epoch: int
    best_val_ndcg: float


def _batch_loss(model, batch, gap_index, audit):
    n = len(batch.users)
    users = np.concatenate([batch.users, batch.users])
    items = np.concatenate([batch.positives, batch.negatives])
    times = np.concatenate([batch.times, batch.times])
    gaps, counts = gap_index.batch(users, items, times)
    if audit:
        valid = np.arange(gaps.shape[1])[None, :] < counts[:, None]
        if np.any(gaps[valid] <= 0):
            raise AssertionError("time leakage: non-positive gap in training batch")
    scores = model.score_pairs(users, items, gaps, counts)
    pos = take_rows(scores, np.arange(n))
    neg = take_rows(scores, np.arange(n, 2 * n))
    return bpr_loss(pos, neg), pos, neg


def train(split, model_cfg: ModelConfig, cfg: TrainConfig, out_dir=None, validate=True) -> TrainResult:
    """Fit all parameters with the summed pairwise loss, early-stopping on
    validation NDCG@50. The returned model holds the best-validation weights."""
    init_rng, rng = seed_streams(cfg.rng_seed)
    model = RecodeModel(split.num_users, split.num_items, model_cfg, seed=init_rng)
    gap_index = model.gap_index(split.histories)
    consumed = ConsumedIndex(split.histories, split.num_items)
    adam = AdamState()
    params = {k: t.data for k, t in model.store}
    rows, batch_losses = [], []
    best, best_epoch, best_state, stale = -np.inf, 0, model.store.state_dict(), 0
    can_validate = validate and bool(split.val_target)
    t_start = time.perf_counter()
    for epoch in range(1, cfg.max_epochs + 1):
        epoch_loss = 0.0
        for b, batch in enumerate(epoch_batches(split, cfg.batch_size, consumed, rng, cfg.negatives)):
            model.store.zero_grad()
            loss, pos, neg = _batch_loss(model, batch, gap_index, cfg.audit_gaps)
            value = loss.item()
            if not np.isfinite(value):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}, batch {b}: "
                    f"pos range [{pos.data.min():.3g}, {pos.data.max():.3g}], "
                    f"neg range [{neg.data.min():.3g}, {neg.data.max():.3g}]")
            backward(loss)
            adam_step(params, model.store.grads(), adam, cfg.learning_rate, cfg.weight_decay)
            batch_losses.append(value)
            epoch_loss += value
        row = {"epoch": epoch, "train_loss": epoch_loss, "val_recall@50": float("nan"),
               "val_ndcg@50": float("nan"), "wall_time": time.perf_counter() - t_start}
        if can_validate:
            m = evaluate(model, split, "val", ks=(50,), gap_index=gap_index)
            row["val_recall@50"], row["val_ndcg@50"] = m.recall[50], m.ndcg[50]
        rows.append(row)
        log.info("epoch %d loss %.4f val R@50 %.4f N@50 %.4f", epoch, epoch_loss,
                 row["val_recall@50"], row["val_ndcg@50"])
        if not can_validate:
            best_epoch, best_state = epoch, model.store.state_dict()
            continue
        if row["val_ndcg@50"] > best:
            best, best_epoch, best_state, stale = row["val_ndcg@50"], epoch, model.store.state_dict(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.store.load_state_dict(best_state)
    result = TrainResult(model, rows, batch_losses, best_epoch, float(best))
    if out_dir is not None:
        write_outputs(result, out_dir, cfg)
    return result


def write_outputs(result: TrainResult, out_dir, cfg: TrainConfig):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result.model.save(out_dir / "checkpoint.txt",
                      {"seed": cfg.rng_seed, "best_epoch": result.best_epoch})
    with (out_dir / "train_log.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        w.writeheader()
        w.writerows(result.log)
