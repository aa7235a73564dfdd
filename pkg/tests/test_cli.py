import csv
import json

import pytest

from recode.cli import main

TINY = ["data.num_users=30", "data.num_items=80", "data.interactions_per_user=20", "model.dim=4",
        "train.max_epochs=2", "train.batch_size=64"]


def run(*args, sets=TINY):
    argv = list(args)
    for s in sets:
        argv += ["--set", s]
    return main(argv)


def test_synth_writes_log_and_stats(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("synth", "--out", str(a), sets=["data.num_users=50"]) == 0
    assert run("synth", "--out", str(b), sets=["data.num_users=50"]) == 0
    stats = json.loads((a / "stats.json").read_text())
    assert set(stats) == {"users", "items", "interactions", "repeat_ratio"}
    assert 0.30 <= stats["repeat_ratio"] <= 0.40
    assert (a / "interactions.tsv").read_bytes() == (b / "interactions.tsv").read_bytes()
    assert (a / "config.txt").exists()


def test_train_eval_two_seeds(tmp_path):
    out = str(tmp_path)
    assert run("train", "--out", out, "--set", "run.seeds=0,1") == 0
    for s in (0, 1):
        assert (tmp_path / "mf+recode" / f"seed_{s}" / "checkpoint.txt").exists()
        assert (tmp_path / "mf+recode" / f"seed_{s}" / "train_log.csv").exists()
    assert run("eval", "--out", out, "--set", "run.seeds=0,1", "--set", "eval.stratify=true") == 0
    rows = list(csv.DictReader((tmp_path / "mf+recode" / "metrics.csv").open()))
    assert list(rows[0]) == ["model", "dataset", "seed", "stratum", "K", "recall", "ndcg"]
    assert {r["seed"] for r in rows} == {"0", "1", "mean", "std"}
    strata = list(csv.DictReader((tmp_path / "mf+recode" / "stratified.csv").open()))
    assert len(strata) >= 2 and all(r["model"] == "mf+recode" for r in strata)


def test_single_seed_omits_std(tmp_path):
    out = str(tmp_path)
    assert run("train", "--out", out, "--seed", "3", "--set", "model.repeat=none") == 0
    assert run("eval", "--out", out, "--seed", "3", "--set", "model.repeat=none") == 0
    rep = json.loads((tmp_path / "mf" / "metrics.json").read_text())
    assert rep["std"]["recall@50"] is None
    assert rep["mean"]["recall@50"] == rep["seeds"]["3"]["recall"]["50"]
    seeds = {r["seed"] for r in csv.DictReader((tmp_path / "mf" / "metrics.csv").open())}
    assert seeds == {"3", "mean"}


def test_rerun_from_resolved_config_is_identical(tmp_path):
    assert run("train", "--out", str(tmp_path / "a"), "--seed", "1") == 0
    resolved = tmp_path / "a" / "mf+recode" / "config.txt"
    assert main(["train", "--config", str(resolved), "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "mf+recode" / "seed_1" / "checkpoint.txt").read_text()
    b = (tmp_path / "b" / "mf+recode" / "seed_1" / "checkpoint.txt").read_text()
    assert a == b


def test_compare_reports_and_flags_missing(tmp_path, capsys):
    out = str(tmp_path)
    sets = ["run.arms=none,neural", "run.seeds=0"]
    for kind in ("none", "neural"):
        assert run("train", "--out", out, "--set", f"model.repeat={kind}", sets=TINY + sets) == 0
        assert run("eval", "--out", out, "--set", f"model.repeat={kind}", sets=TINY + sets) == 0
    assert run("compare", "--out", out, sets=TINY + sets) == 0
    rows = list(csv.DictReader((tmp_path / "compare.csv").open()))
    assert all(float(r["relative_improvement"]) == 0.0 for r in rows if r["model"] == "mf")
    assert run("compare", "--out", out, sets=TINY + ["run.arms=none,neural,parametric_gaussian"]) == 1
    err = capsys.readouterr().err
    assert "mf+param_gauss" in err
    assert (tmp_path / "FAILED.txt").exists()


def test_errors_exit_nonzero(tmp_path, capsys):
    assert run("train", "--out", str(tmp_path), "--set", "train.learning_rate=0") == 1
    assert run("eval", "--out", str(tmp_path)) == 1
    assert "missing checkpoints" in capsys.readouterr().err
    assert run("train", "--out", str(tmp_path), "--set", f"data.path={tmp_path / 'nope.tsv'}") == 1
    assert main(["train", "--config", str(tmp_path / "nope.txt")]) == 1


def test_train_from_raw_tsv(tmp_path):
    lines = [f"user{u}\tsong{(u * 7 + k) % 13}\t{1000 * k + u}" for u in range(6) for k in range(8)]
    (tmp_path / "log.tsv").write_text("\n".join(lines) + "\n")
    sets = TINY + [f"data.path={tmp_path / 'log.tsv'}", "run.seeds=0"]
    assert run("train", "--out", str(tmp_path / "o"), sets=sets) == 0
    assert run("eval", "--out", str(tmp_path / "o"), sets=sets) == 0
    rep = json.loads((tmp_path / "o" / "mf+recode" / "metrics.json").read_text())
    assert rep["dataset"] == "log"


def test_gradcheck_command(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 5 and "FAIL" not in out
