"""Command-line entry point: synth, train, eval, compare, sweep, gradcheck.

Artifacts for an arm live under ``<out>/<arm>/`` with one ``seed_<k>/``
directory per seed. A failed command leaves ``<out>/FAILED.txt`` behind so
partial outputs are never mistaken for a finished run.
"""

import argparse
import csv
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig, apply_overrides, load_config, write_config
from .data import build_histories, dataset_stats, generate_synthetic, ingest_tsv, leave_one_out, read_canonical_tsv, write_tsv
from .evaluator import default_threads, evaluate, mean_std, stratify
from .experiments import relative_improvement
from .model import ModelConfig, RecodeModel
from .trainer import LR_GRID, WD_GRID, train

log = logging.getLogger("recode")

METRIC_FIELDS = ("model", "dataset", "seed", "stratum", "K", "recall", "ndcg")


def load_interactions(cfg: RunConfig):
    d = cfg.data
    if not d.path:
        syn = d.synthetic()
        return generate_synthetic(syn), syn.num_users, syn.num_items
    path = Path(d.path)
    if not path.exists():
        raise FileNotFoundError(f"dataset {path} does not exist")
    if d.canonical:
        inter = read_canonical_tsv(path)
        return inter, 1 + max(x.user_id for x in inter), 1 + max(x.item_id for x in inter)
    res = ingest_tsv(path, d.user_col, d.item_col, d.time_col, d.header)
    if res.duplicates:
        log.info("kept %d duplicate rows", res.duplicates)
    return res.interactions, res.num_users, res.num_items


def load_split(cfg: RunConfig):
    inter, nu, ni = load_interactions(cfg)
    return leave_one_out(build_histories(inter, nu), ni)


def arm_dir(cfg: RunConfig, model_cfg: ModelConfig | None = None):
    return Path(cfg.run.out) / (model_cfg or cfg.model).arm_name


# commands


def cmd_synth(cfg: RunConfig):
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    syn = cfg.data.synthetic()
    inter = generate_synthetic(syn)
    write_tsv(inter, out / "interactions.tsv")
    stats = dataset_stats(inter, syn.num_users, syn.num_items)
    (out / "stats.json").write_text(json.dumps(stats, indent=2) + "\n")
    write_config(cfg, out / "config.txt")
    print(json.dumps(stats))
    return stats


def cmd_train(cfg: RunConfig):
    split = load_split(cfg)
    root = arm_dir(cfg)
    write_config(cfg, root / "config.txt")
    results = {}
    for seed in cfg.run.seeds:
        t0 = time.perf_counter()
        res = train(split, cfg.model, dataclasses.replace(cfg.train, rng_seed=seed), out_dir=root / f"seed_{seed}")
        results[seed] = res
        print(f"{cfg.model.arm_name} seed {seed}: best epoch {res.best_epoch}, "
              f"val NDCG@50 {res.best_val_ndcg:.4f} ({time.perf_counter() - t0:.1f}s)")
    return results


def _aggregate(per_seed, ks):
    agg = {"mean": {}, "std": {}}
    for metric in ("recall", "ndcg"):
        for k in ks:
            m, s = mean_std([getattr(r, metric)[k] for r in per_seed.values()])
            agg["mean"][f"{metric}@{k}"] = m
            agg["std"][f"{metric}@{k}"] = s
    return agg


def cmd_eval(cfg: RunConfig):
    split = load_split(cfg)
    root = arm_dir(cfg)
    ks = tuple(cfg.eval.ks)
    missing = [s for s in cfg.run.seeds if not (root / f"seed_{s}" / "checkpoint.txt").exists()]
    if missing:
        raise FileNotFoundError(f"missing checkpoints under {root} for seeds {missing}")
    threads = default_threads()
    per_seed, strata = {}, {}
    for seed in cfg.run.seeds:
        model, _ = RecodeModel.load(root / f"seed_{seed}" / "checkpoint.txt")
        if (model.num_users, model.num_items) != (split.num_users, split.num_items):
            raise ValueError(f"checkpoint for seed {seed} does not match the dataset's id spaces")
        m = evaluate(model, split, "test", ks=ks, threads=threads)
        per_seed[seed] = m
        if cfg.eval.stratify:
            strata[seed] = stratify(m, split.histories, cfg.eval.buckets)
    arm, dataset = cfg.model.arm_name, cfg.data.name
    agg = _aggregate(per_seed, ks)
    report = {"model": arm, "dataset": dataset, "seeds": {str(s): m.as_dict() for s, m in per_seed.items()},
              **agg}
    (root / "metrics.json").write_text(json.dumps(report, indent=2) + "\n")
    with (root / "metrics.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_FIELDS)
        for seed, m in per_seed.items():
            for k in ks:
                w.writerow([arm, dataset, seed, m.stratum, k, m.recall[k], m.ndcg[k]])
        for label in ("mean", "std"):
            if label == "std" and len(per_seed) < 2:
                continue
            for k in ks:
                w.writerow([arm, dataset, label, "overall", k, agg[label][f"recall@{k}"], agg[label][f"ndcg@{k}"]])
    if strata:
        _write_strata(root / "stratified.csv", arm, dataset, strata)
    for k in ks:
        r, n = agg["mean"][f"recall@{k}"], agg["mean"][f"ndcg@{k}"]
        rs, ns = agg["std"][f"recall@{k}"], agg["std"][f"ndcg@{k}"]
        spread = f" (std {rs:.4f} / {ns:.4f})" if rs is not None else ""
        print(f"{arm} on {dataset}: Recall@{k} {r:.4f}  NDCG@{k} {n:.4f}{spread}")
    return report


def _write_strata(path, arm, dataset, strata):
    # one row per repeat-ratio bucket, Recall@50 averaged over seeds
    labels = [s.stratum for s in next(iter(strata.values()))]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "dataset", "stratum", "n_users", "recall@50", "recall@50_std"])
        for b, label in enumerate(labels):
            vals = [seeds[b].recall.get(50, float("nan")) for seeds in strata.values()]
            m, s = mean_std(vals)
            w.writerow([arm, dataset, label, next(iter(strata.values()))[b].n_users, m, "" if s is None else s])


def cmd_compare(cfg: RunConfig):
    arms = [dataclasses.replace(cfg.model, repeat=kind) for kind in cfg.run.arms]
    paths = {a.arm_name: arm_dir(cfg, a) / "metrics.json" for a in arms}
    missing = [name for name, p in paths.items() if not p.exists()]
    if missing:
        raise FileNotFoundError(f"missing evaluated arms: {', '.join(missing)} (run train and eval for them first)")
    reports = {name: json.loads(p.read_text()) for name, p in paths.items()}
    base = next((a.arm_name for a in arms if a.repeat == "none"), arms[0].arm_name)
    rows = []
    for name, rep in reports.items():
        for key in sorted(rep["mean"]):
            metric, k = key.split("@")
            value, ref = rep["mean"][key], reports[base]["mean"][key]
            rows.append({"model": name, "metric": metric, "K": int(k), "mean": value,
                         "std": rep["std"][key], "baseline": base,
                         "relative_improvement": relative_improvement(value, ref)})
    out = Path(cfg.run.out) / "compare.csv"
    with out.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"{r['model']:>16} {r['metric']}@{r['K']:<4} {r['mean']:.4f}  {r['relative_improvement']:+.2%} vs {base}")
    return rows


def cmd_sweep(cfg: RunConfig):
    """lr x weight-decay grid on the first seed, selected by validation NDCG@50."""
    split = load_split(cfg)
    root = arm_dir(cfg) / "sweep"
    seed = cfg.run.seeds[0]
    rows = []
    for lr in LR_GRID:
        for wd in WD_GRID:
            tc = dataclasses.replace(cfg.train, learning_rate=lr, weight_decay=wd, rng_seed=seed)
            res = train(split, cfg.model, tc)
            rows.append({"learning_rate": lr, "weight_decay": wd, "best_epoch": res.best_epoch,
                         "val_ndcg@50": res.best_val_ndcg})
            print(f"lr {lr:g} wd {wd:g}: val NDCG@50 {res.best_val_ndcg:.4f}")
    root.mkdir(parents=True, exist_ok=True)
    with (root / "sweep.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    best = max(rows, key=lambda r: r["val_ndcg@50"])
    chosen = apply_overrides(cfg, [f"train.learning_rate={best['learning_rate']!r}",
                                   f"train.weight_decay={best['weight_decay']!r}"])
    write_config(chosen, root / "best_config.txt")
    print(f"best: lr {best['learning_rate']:g} wd {best['weight_decay']:g}")
    return best


def verification_checks():
    """Numerics and solver oracles; yields (name, passed, detail)."""
    from .numerics import MlpSpec, gradcheck
    from .odesolve import ExponentialKernel, GaussianKernel, SolveConfig, convergence_order, ode_solve

    rng = np.random.default_rng(0)
    acts = ["tanh", "relu", "sigmoid"]
    worst = 0.0
    for trial in range(10):
        depth = int(rng.integers(1, 3))
        widths = [int(w) for w in rng.integers(1, 65, size=depth + 1)]
        spec = MlpSpec(widths, [acts[int(rng.integers(3))] for _ in range(depth)])
        worst = max(worst, gradcheck(spec, trials=1, seed=trial).max_rel_error)
    yield "mlp gradients vs finite differences", worst < 1e-4, f"max rel error {worst:.2e}"
    (h,) = ode_solve(ExponentialKernel(1.0).field, np.array([1.0]), [1.0], SolveConfig("euler", 10))
    err = abs(h.data[0] - 0.9 ** 10)
    yield "euler N=10 recurrence", err < 1e-12, f"|h - 0.9^10| = {err:.1e}"
    for kernel in (ExponentialKernel(1.0), GaussianKernel(0.7, 0.5)):
        order = convergence_order(kernel, np.array([1.0]), 1.0, "euler")
        yield f"euler order ({type(kernel).__name__})", 0.9 <= order <= 1.1, f"{order:.3f}"
    order = convergence_order(ExponentialKernel(1.0), np.array([1.0]), 1.0, "rk4")
    yield "rk4 order", 3.5 <= order <= 4.5, f"{order:.3f}"


def cmd_gradcheck(cfg: RunConfig):
    ok = True
    for name, passed, detail in verification_checks():
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    if not ok:
        raise RuntimeError("verification failed")
    return ok


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "compare": cmd_compare,
            "sweep": cmd_sweep, "gradcheck": cmd_gradcheck}


def build_parser():
    p = argparse.ArgumentParser(prog="recode", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="flat section.key=value config file")
    p.add_argument("--seed", type=int, help="run this single seed instead of run.seeds")
    p.add_argument("--out", help="output directory (overrides run.out)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config entry, e.g. train.learning_rate=5e-4")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"run.seeds={args.seed}")
    if args.out:
        overrides.append(f"run.out={args.out}")
    return apply_overrides(cfg, overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    out = None
    try:
        cfg = resolve_config(args)
        out = Path(cfg.run.out)
        flag = out / "FAILED.txt"
        if flag.exists():
            flag.unlink()
        COMMANDS[args.command](cfg)
    except Exception as exc:  # noqa: BLE001 - any failure maps to a nonzero exit
        print(f"recode {args.command}: error: {exc}", file=sys.stderr)
        if out is not None and out.exists():
            (out / "FAILED.txt").write_text(f"command: {args.command}\nerror: {exc}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
