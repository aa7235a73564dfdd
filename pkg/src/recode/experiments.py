"""Multi-seed arm comparisons on synthetic data, shared by scripts and tests."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass

import numpy as np

from .data import Exponential, Mixture, SyntheticConfig, build_histories, generate_synthetic, leave_one_out
from .evaluator import evaluate, mean_std
from .model import ModelConfig
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)

# budget used for the synthetic comparisons; validation picks the best epoch
EXPERIMENT_TRAIN = TrainConfig(max_epochs=15, patience=3, negatives="not_target")
# bimodal gaps: a fast exponential burst plus a two-week periodic return
MIXTURE_GAPS = Mixture(weight=0.5, rate=0.5, mean=14.0, std=3.0)


@dataclass
class ArmResult:
    arm: str
    seeds: list
    recall50: list
    ndcg50: list
    seconds: float

    @property
    def mean_recall50(self):
        return mean_std(self.recall50)[0]


def synthetic_split(syn: SyntheticConfig):
    inter = generate_synthetic(syn)
    return leave_one_out(build_histories(inter, syn.num_users), syn.num_items)


def run_arm(split, model_cfg: ModelConfig, seeds, train_cfg: TrainConfig = EXPERIMENT_TRAIN):
    t0 = time.perf_counter()
    rec, ndcg = [], []
    for s in seeds:
        res = train(split, model_cfg, dataclasses.replace(train_cfg, rng_seed=s))
        m = evaluate(res.model, split, "test")
        rec.append(m.recall[50])
        ndcg.append(m.ndcg[50])
        log.info("%s seed %d R@50 %.4f N@50 %.4f (best epoch %d)", model_cfg.arm_name, s,
                 m.recall[50], m.ndcg[50], res.best_epoch)
    return ArmResult(model_cfg.arm_name, list(seeds), rec, ndcg, time.perf_counter() - t0)


def compare_arms(split, repeats, seeds, train_cfg: TrainConfig = EXPERIMENT_TRAIN, backbone="mf_dot"):
    """One ArmResult per repeat kind, keyed by arm name."""
    out = {}
    for kind in repeats:
        cfg = ModelConfig(backbone=backbone, repeat=kind)
        out[cfg.arm_name] = run_arm(split, cfg, seeds, train_cfg)
    return out


def relative_improvement(treated, base):
    return (treated - base) / base if base else float("inf")


def repeat_ratio_trend(probs, seeds, syn: SyntheticConfig | None = None,
                       train_cfg: TrainConfig = EXPERIMENT_TRAIN):
    """Relative R@50 gain of MF+ReCODE over MF for each repeat_prob."""
    syn = syn or SyntheticConfig()
    rows = []
    for p in probs:
        split = synthetic_split(dataclasses.replace(syn, repeat_prob=p))
        arms = compare_arms(split, ("none", "neural"), seeds, train_cfg)
        base, treated = arms["mf"].mean_recall50, arms["mf+recode"].mean_recall50
        rows.append({"repeat_prob": p, "mf": base, "mf+recode": treated,
                     "improvement": relative_improvement(treated, base)})
        log.info("repeat_prob %.2f: mf %.4f mf+recode %.4f", p, base, treated)
    return rows


def is_non_decreasing(values):
    return bool(np.all(np.diff(np.asarray(values, dtype=np.float64)) >= 0))


def uplift_experiment(seeds, train_cfg: TrainConfig = EXPERIMENT_TRAIN):
    """MF vs MF+ReCODE vs MF+parametric-exponential on exponential gaps, and
    MF+ReCODE vs MF+parametric-exponential on the misspecified mixture."""
    exp_split = synthetic_split(SyntheticConfig(gap_process=Exponential(1 / 7)))
    mix_split = synthetic_split(SyntheticConfig(gap_process=MIXTURE_GAPS))
    return {
        "exponential": compare_arms(exp_split, ("none", "neural", "parametric_exponential"), seeds, train_cfg),
        "mixture": compare_arms(mix_split, ("neural", "parametric_exponential"), seeds, train_cfg),
    }
