"""Fused scorer: static backbone score plus repeat intention."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .backbone import BACKBONES, Backbone
from .numerics import ParamStore, Tensor, load_checkpoint, no_grad, save_checkpoint
from .repeat import GapIndex, NeuralRepeat, ParametricRepeat, RepeatConfig, pad_gaps

REPEAT_KINDS = ("none", "neural", "parametric_exponential", "parametric_gaussian")


@dataclass
class ModelConfig:
    backbone: str = "mf_dot"
    dim: int = 32
    repeat: str = "neural"
    d_ode: int | None = None
    time_scale_days: float = 30.0
    max_repeats: int = 20
    solver: str = "euler"
    substeps: int = 5
    include_time: bool = False

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.repeat not in REPEAT_KINDS:
            raise ValueError(f"unknown repeat module {self.repeat!r}; expected one of {REPEAT_KINDS}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        self.repeat_config()

    def repeat_config(self):
        return RepeatConfig(self.time_scale_days, self.max_repeats, self.d_ode,
                            self.include_time, self.solver, self.substeps)

    @property
    def arm_name(self):
        base = {"mf_dot": "mf", "mlp_tower": "mlp"}[self.backbone]
        suffix = {"none": "", "neural": "+recode", "parametric_exponential": "+param_exp",
                  "parametric_gaussian": "+param_gauss"}[self.repeat]
        return base + suffix


class RecodeModel:
    def __init__(self, num_users, num_items, cfg: ModelConfig | None = None, seed=0):
        self.cfg = cfg or ModelConfig()
        self.num_users, self.num_items = num_users, num_items
        rng = np.random.default_rng(seed)
        self.store = ParamStore()
        self.backbone = Backbone(num_users, num_items, self.cfg.dim, self.cfg.backbone, rng, self.store)
        kind = self.cfg.repeat
        if kind == "neural":
            self.repeat = NeuralRepeat(self.cfg.dim, self.cfg.repeat_config(), rng, self.store)
        elif kind.startswith("parametric_"):
            self.repeat = ParametricRepeat(kind.split("_", 1)[1], self.store)
        else:
            self.repeat = None

    def gap_index(self, histories):
        return GapIndex(histories, self.cfg.time_scale_days, self.cfg.max_repeats)

    def score_pairs(self, users, items, gaps, counts):
        """R = R_sta + R_rep for a batch; ``gaps``/``counts`` come from pad_gaps."""
        e_u, e_i = self.backbone.embed(users, items)
        sta = self.backbone.score(e_u, e_i)
        if self.repeat is None:
            return sta
        return sta + self.repeat.score(e_u, e_i, gaps, counts)

    def fused_score(self, user, item, t_target, gap_index: GapIndex):
        gaps, counts = pad_gaps([gap_index.gaps(user, item, t_target)])
        with no_grad():
            return float(self.score_pairs([user], [item], gaps, counts).data[0])

    def score_all(self, users, times, gap_index: GapIndex, chunk=4096):
        """Full-catalog fused scores, (len(users), num_items). Repeat scores
        are computed only for items consumed before each user's time."""
        users = np.asarray(users, dtype=np.int64)
        scores = self.backbone.score_all(users)
        if self.repeat is None:
            return scores
        rows, items, gap_lists = [], [], []
        for r, (u, t) in enumerate(zip(users.tolist(), times)):
            for i in gap_index.prior_items(u, t):
                rows.append(r)
                items.append(i)
                gap_lists.append(gap_index.gaps(u, i, t))
        if not rows:
            return scores
        rows, items = np.array(rows), np.array(items)
        # similar gap counts per chunk keep padding small
        order = np.argsort([len(g) for g in gap_lists], kind="stable")
        with no_grad():
            for start in range(0, len(order), chunk):
                sel = order[start:start + chunk]
                gaps, counts = pad_gaps([gap_lists[k] for k in sel])
                e_u, e_i = self.backbone.embed(users[rows[sel]], items[sel])
                rep = self.repeat.score(e_u, e_i, gaps, counts).data
                scores[rows[sel], items[sel]] += rep
        return scores

    # persistence

    def meta(self):
        return {"num_users": self.num_users, "num_items": self.num_items,
                "model": dataclasses.asdict(self.cfg)}

    def save(self, path, extra_meta=None):
        meta = self.meta()
        meta.update(extra_meta or {})
        save_checkpoint(path, self.store.state_dict(), meta)

    @classmethod
    def load(cls, path):
        state, meta = load_checkpoint(path)
        model = cls(meta["num_users"], meta["num_items"], ModelConfig(**meta["model"]))
        model.store.load_state_dict(state)
        return model, meta


def as_scalar(t: Tensor):
    return float(np.asarray(t.data).reshape(()))
