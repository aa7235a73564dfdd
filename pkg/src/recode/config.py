"""Run configuration as a flat, typed ``section.key=value`` text file.

Every run writes its fully resolved config next to its outputs, so a rerun
from that file reproduces it exactly.
"""

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .data import GAP_PROCESSES, Exponential, Gaussian, Mixture, SyntheticConfig
from .model import REPEAT_KINDS, ModelConfig
from .trainer import TrainConfig


@dataclass
class DataConfig:
    path: str = ""  # empty: generate the synthetic log below
    canonical: bool = False  # integer ids as written by `recode synth`
    header: bool = False
    user_col: int = 0
    item_col: int = 1
    time_col: int = 2
    num_users: int = 500
    num_items: int = 1000
    interactions_per_user: int = 100
    repeat_prob: float = 0.35
    gap_process: str = "exponential"
    gap_rate: float = 1 / 7  # per day
    gap_mean: float = 14.0  # days
    gap_std: float = 3.0
    gap_weight: float = 0.5  # exponential share of the mixture
    popularity_exponent: float = 1.0
    novel_gap_days: float = 7.0
    seed: int = 0

    def __post_init__(self):
        if self.gap_process not in GAP_PROCESSES:
            raise ValueError(f"data.gap_process must be one of {sorted(GAP_PROCESSES)}")

    @property
    def name(self):
        return Path(self.path).stem if self.path else f"synthetic_p{self.repeat_prob:g}_{self.gap_process}"

    def synthetic(self):
        if self.gap_process == "exponential":
            gap = Exponential(self.gap_rate)
        elif self.gap_process == "gaussian":
            gap = Gaussian(self.gap_mean, self.gap_std)
        else:
            gap = Mixture(self.gap_weight, self.gap_rate, self.gap_mean, self.gap_std)
        return SyntheticConfig(self.num_users, self.num_items, self.interactions_per_user, self.repeat_prob,
                               gap, self.popularity_exponent, self.novel_gap_days, self.seed)


@dataclass
class EvalConfig:
    ks: tuple = (50, 100)
    stratify: bool = False
    buckets: int = 4


@dataclass
class RunSection:
    seeds: tuple = (0, 1, 2, 3, 4)
    out: str = "out"
    arms: tuple = ("none", "neural", "parametric_exponential")  # compared by `recode compare`

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("run.seeds must be non-empty")
        bad = [a for a in self.arms if a not in REPEAT_KINDS]
        if bad:
            raise ValueError(f"run.arms has unknown repeat kinds {bad}")


SECTIONS = {"data": DataConfig, "model": ModelConfig, "train": TrainConfig, "eval": EvalConfig,
            "run": RunSection}


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    run: RunSection = field(default_factory=RunSection)


def _convert(raw, hint, default, key):
    raw = raw.strip()
    if hint is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if hint is tuple:
            kind = type(default[0]) if default else str
            return tuple(kind(x.strip()) for x in raw.split(",") if x.strip())
        if typing.get_origin(hint) in (typing.Union, types.UnionType):
            return None if raw.lower() in ("", "none") else int(raw)
    except ValueError:
        raise ValueError(f"{key}: cannot parse {raw!r}") from None
    return raw


def _format(value):
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        return "none"
    return repr(value) if isinstance(value, float) else str(value)


def apply_overrides(cfg: RunConfig, pairs) -> RunConfig:
    """Return a new config with ``section.key=value`` strings applied (validated)."""
    updates = {name: {} for name in SECTIONS}
    for lineno, pair in enumerate(pairs, start=1):
        if "=" not in pair:
            raise ValueError(f"entry {lineno}: expected section.key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        key = key.strip()
        section, _, name = key.partition(".")
        if section not in SECTIONS:
            raise ValueError(f"unknown config section in {key!r}")
        cls = SECTIONS[section]
        hints = typing.get_type_hints(cls)
        fields = {f.name: f for f in dataclasses.fields(cls)}
        if name not in fields:
            raise ValueError(f"unknown config key {key!r}")
        current = getattr(getattr(cfg, section), name)
        updates[section][name] = _convert(raw, hints[name], current, key)
    return RunConfig(**{s: dataclasses.replace(getattr(cfg, s), **updates[s]) for s in SECTIONS})


def parse_config(text, base: RunConfig | None = None) -> RunConfig:
    pairs = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            pairs.append(line)
    return apply_overrides(base or RunConfig(), pairs)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    return parse_config(path.read_text())


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for section in SECTIONS:
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            lines.append(f"{section}.{f.name}={_format(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def write_config(cfg: RunConfig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(cfg))
