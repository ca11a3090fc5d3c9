"""Experiment configuration: a YAML file with ``env``, ``train``, ``eval`` and
``export`` sections plus a top-level ``seed``.

Parsing collects every problem before failing, so one run of ``train`` on a
broken file lists all of them.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..envs.assembly import FeedbackMode
from ..envs.matrix import PRESETS
from ..magrpo import BRANCH_MODES, TrainConfig

ENV_NAMES = ("matrix", "coop_assembly")
METHODS = ("magrpo", "independent", "single_agent")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid config:\n" + "\n".join(f"  - {p}" for p in self.problems))


@dataclass
class EnvSection:
    name: str
    preset: str | None = None
    joint_utility: list | None = None
    payoffs: list | None = None
    dataset: str | None = None
    horizon: int = 1
    feedback: str = FeedbackMode.SELF_EVOLVING.value
    sequential_mode: bool = False
    weights: list[float] = field(default_factory=lambda: [0.25, 0.25, 0.25, 0.25])


@dataclass
class TrainSection:
    method: str = "magrpo"
    group_size: int = 32
    learning_rate: float = 0.1
    episodes: int = 500
    branch_mode: str = "whole_group"


@dataclass
class EvalSection:
    samples: int = 100
    k: list[int] = field(default_factory=lambda: [1])


@dataclass
class ExportSection:
    moving_average: int | None = None


@dataclass
class ExperimentConfig:
    env: EnvSection
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    export: ExportSection = field(default_factory=ExportSection)
    seed: int = 0

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(t.group_size, t.learning_rate, t.episodes, t.branch_mode, self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["env"] = {k: v for k, v in d["env"].items() if v is not None}
        if d["export"]["moving_average"] is None:
            d["export"] = {}
        return d

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


SECTIONS = {"env": EnvSection, "train": TrainSection, "eval": EvalSection, "export": ExportSection}
REQUIRED = {"env": ("name",)}


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (_is_int(v) or isinstance(v, float)) and math.isfinite(v)


def _is_matrix(v) -> bool:
    return (isinstance(v, list) and len(v) == 2
            and all(isinstance(r, list) and len(r) == 2 and all(_is_num(x) for x in r) for r in v))


def _check_types(where: str, values: dict, specs: dict, problems: list[str]) -> None:
    for key, (check, what) in specs.items():
        if key in values and values[key] is not None and not check(values[key]):
            problems.append(f"{where}.{key} must be {what}, got {values[key]!r}")


def config_from_dict(raw: Any) -> ExperimentConfig:
    problems: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a mapping"])
    allowed = set(SECTIONS) | {"seed"}
    for key in raw:
        if key not in allowed:
            problems.append(f"unknown top-level key {key!r}")
    sections: dict[str, dict] = {}
    for name, cls in SECTIONS.items():
        body = raw.get(name, {})
        if body is None:
            body = {}
        if not isinstance(body, dict):
            problems.append(f"section {name!r} must be a mapping")
            body = {}
        known = set(cls.__dataclass_fields__)
        for key in body:
            if key not in known:
                problems.append(f"unknown key {name}.{key}")
        for key in REQUIRED.get(name, ()):
            if key not in body:
                problems.append(f"missing required key {name}.{key}")
        sections[name] = {k: v for k, v in body.items() if k in known}

    seed = raw.get("seed", 0)
    if not _is_int(seed) or seed < 0:
        problems.append(f"seed must be a nonnegative integer, got {seed!r}")

    env, train, ev, ex = (sections[s] for s in ("env", "train", "eval", "export"))
    _check_types("env", env, {
        "name": (lambda v: v in ENV_NAMES, f"one of {ENV_NAMES}"),
        "preset": (lambda v: v in PRESETS, f"one of {sorted(PRESETS)}"),
        "joint_utility": (_is_matrix, "a 2x2 list of numbers"),
        "payoffs": (lambda v: isinstance(v, list) and len(v) == 2 and all(map(_is_matrix, v)),
                    "a list of two 2x2 matrices"),
        "dataset": (lambda v: isinstance(v, str), "a path string"),
        "horizon": (lambda v: _is_int(v) and v >= 1, "an integer >= 1"),
        "feedback": (lambda v: v in [m.value for m in FeedbackMode],
                     f"one of {[m.value for m in FeedbackMode]}"),
        "sequential_mode": (lambda v: isinstance(v, bool), "a boolean"),
        "weights": (lambda v: isinstance(v, list) and len(v) == 4 and all(_is_num(x) and x >= 0 for x in v)
                    and abs(sum(v) - 1.0) <= 1e-12, "four nonnegative numbers summing to 1"),
    }, problems)
    _check_types("train", train, {
        "method": (lambda v: v in METHODS, f"one of {METHODS}"),
        "group_size": (_is_int, "an integer"),
        "learning_rate": (lambda v: _is_num(v) and v > 0, "a positive number"),
        "episodes": (lambda v: _is_int(v) and v >= 0, "a nonnegative integer"),
        "branch_mode": (lambda v: v in BRANCH_MODES, f"one of {BRANCH_MODES}"),
    }, problems)
    _check_types("eval", ev, {
        "samples": (lambda v: _is_int(v) and v >= 1, "a positive integer"),
        "k": (lambda v: isinstance(v, list) and v and all(_is_int(x) and x >= 1 for x in v),
              "a nonempty list of positive integers"),
    }, problems)
    _check_types("export", ex, {
        "moving_average": (lambda v: _is_int(v) and v >= 1, "a positive integer"),
    }, problems)
    if problems:
        raise ConfigError(problems)

    cfg = ExperimentConfig(EnvSection(**env), TrainSection(**train), EvalSection(**ev),
                           ExportSection(**ex), seed)
    problems += _semantic_problems(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def _semantic_problems(cfg: ExperimentConfig) -> list[str]:
    e, t = cfg.env, cfg.train
    out = []
    if e.name == "matrix":
        if e.preset is None and e.joint_utility is None:
            out.append("matrix env needs env.preset or env.joint_utility")
        if e.preset is not None and (e.joint_utility is not None or e.payoffs is not None):
            out.append("env.preset cannot be combined with custom matrices")
        if e.payoffs is not None and e.joint_utility is None:
            out.append("env.payoffs needs env.joint_utility")
        if e.dataset is not None:
            out.append("env.dataset applies to coop_assembly only")
        if e.sequential_mode:
            out.append("env.sequential_mode applies to coop_assembly only")
        if e.horizon != 1:
            out.append("matrix games are one-step: env.horizon must be 1")
        if t.method == "independent":
            has_payoffs = e.payoffs is not None or (e.preset and PRESETS[e.preset][1] is not None)
            if not has_payoffs:
                out.append("method=independent needs a per-agent decomposition "
                           "(preset posg1/posg2 or env.payoffs)")
    else:
        if e.preset is not None or e.joint_utility is not None or e.payoffs is not None:
            out.append("env.preset/joint_utility/payoffs apply to matrix only")
        if t.method == "independent":
            out.append("method=independent needs per-agent rewards, which coop_assembly lacks")
    if t.group_size < 2:
        out.append(f"train.group_size must be >= 2 for group-relative advantages "
                   f"(got {t.group_size})")
    too_big = [k for k in cfg.eval.k if k > cfg.eval.samples]
    if too_big:
        out.append(f"eval.k values {too_big} exceed eval.samples={cfg.eval.samples}")
    return out


def parse_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file {path} does not exist"])
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path} is not valid YAML: {exc}"]) from exc
    return config_from_dict(raw)


def with_overrides(cfg: ExperimentConfig, **overrides: Any) -> ExperimentConfig:
    """Re-validate ``cfg`` with dotted-key overrides such as ``{"train.episodes": 10}``."""
    d = cfg.to_dict()
    for dotted, value in overrides.items():
        if value is None:
            continue
        if "." in dotted:
            section, key = dotted.split(".", 1)
            d.setdefault(section, {})[key] = value
        else:
            d[dotted] = value
    return config_from_dict(d)
