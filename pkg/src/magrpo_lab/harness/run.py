"""Run orchestration: training, evaluation, game analysis and plot export."""
from __future__ import annotations

import csv
import json
import math
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..core import ContractError, Environment, TaskSpec
from ..envs import (
    MATRIX_TASK,
    CoopAssemblyEnv,
    JointControlEnv,
    LadderWeights,
    MatrixGameEnv,
    default_dataset,
    load_dataset,
    pass_at_k,
)
from ..envs.matrix import PRESETS
from ..gametheory import BimatrixGame, EquilibriumReport, suboptimality_report
from ..magrpo import member_streams, rollout_member, train, train_independent
from ..policy import PolicyParams, load_policies, save_policies
from .config import ExperimentConfig

SCHEMA = "magrpo-lab/metrics"
SCHEMA_VERSION = 1
LOG_NAME = "metrics.jsonl"
CHECKPOINT_NAME = "policy.ckpt"
CONFIG_NAME = "config.yaml"
FAILED_NAME = "FAILED"
LEVEL_NAMES = ("structure", "syntax", "test", "coop")


class RunFailed(RuntimeError):
    """Training raised mid-run; the log holds every episode completed before it."""


# --- environments ----------------------------------------------------------

def build_env(cfg: ExperimentConfig) -> tuple[Environment, tuple[TaskSpec, ...]]:
    """Environment seen by the learner, plus its task dataset.

    ``single_agent`` wraps the base environment so one policy picks the whole
    joint action.
    """
    e = cfg.env
    if e.name == "matrix":
        if e.preset is not None:
            env: Environment = MatrixGameEnv.preset(e.preset)
        else:
            env = MatrixGameEnv(e.joint_utility, e.payoffs)
        tasks: tuple[TaskSpec, ...] = (MATRIX_TASK,)
    else:
        data = load_dataset(e.dataset) if e.dataset else default_dataset()
        env = CoopAssemblyEnv(data.tasks, data.aux_catalog, data.main_catalog,
                              LadderWeights(*e.weights), e.horizon, e.feedback, e.sequential_mode)
        tasks = data.tasks
    if cfg.train.method == "single_agent":
        env = JointControlEnv(env)
    return env, tasks


def check_compatible(env: Environment, policies: Sequence[PolicyParams]) -> None:
    if len(policies) != env.n_agents:
        raise ContractError(f"checkpoint has {len(policies)} policies, environment has "
                            f"{env.n_agents} agents")
    for i, p in enumerate(policies):
        if p.agent != i or p.catalog != tuple(env.catalog(i)):
            raise ContractError(f"checkpoint policy {i} does not match the environment catalog")


# --- training --------------------------------------------------------------

@dataclass
class RunResult:
    out_dir: Path
    log_path: Path
    checkpoint_path: Path
    episodes: int
    policies: list[PolicyParams] = field(repr=False, default_factory=list)


def log_header(cfg: ExperimentConfig) -> dict:
    return {"schema": SCHEMA, "version": SCHEMA_VERSION, "config": cfg.to_dict()}


def _dumps(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path, *,
                   record_time: bool = False) -> RunResult:
    """Train per ``cfg`` and write ``metrics.jsonl``, ``policy.ckpt`` and ``config.yaml``.

    The log is flushed after every episode. On an exception a ``FAILED``
    marker with the traceback is written and :class:`RunFailed` raised.
    ``record_time`` adds wall-clock seconds to each record, which makes logs
    differ between runs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path, ckpt, failed = out / LOG_NAME, out / CHECKPOINT_NAME, out / FAILED_NAME
    failed.unlink(missing_ok=True)
    ckpt.unlink(missing_ok=True)
    (out / CONFIG_NAME).write_text(cfg.dump())

    env, tasks = build_env(cfg)
    trainer = train_independent if cfg.train.method == "independent" else train
    count = 0
    with open(log_path, "w") as f:
        f.write(_dumps(log_header(cfg)) + "\n")
        f.flush()

        def sink(rec: dict) -> None:
            nonlocal count
            f.write(_dumps(rec) + "\n")
            f.flush()
            count += 1

        try:
            result = trainer(cfg.train_config(), lambda: env, tasks, on_episode=sink,
                             record_time=record_time)
        except Exception as exc:
            failed.write_text(f"failed after {count} episodes\n{traceback.format_exc()}")
            raise RunFailed(f"run failed after {count} episodes: {exc}") from exc
    save_policies(result.policies, ckpt)
    return RunResult(out, log_path, ckpt, count, result.policies)


# --- evaluation ------------------------------------------------------------

@dataclass
class TaskEvaluation:
    task_id: int
    mean_return: float
    greedy_return: float
    passes: int | None = None
    greedy_pass: bool | None = None
    pass_at_k: dict[int, float] = field(default_factory=dict)


@dataclass
class EvaluationReport:
    samples: int
    mean_return: float
    std_return: float
    stderr: float
    greedy_mean_return: float
    ladder: dict[str, float] | None
    pass_at_k: dict[int, float]
    tasks: list[TaskEvaluation]

    def to_record(self) -> dict:
        return asdict(self)

    def format_text(self) -> str:
        lines = [f"samples per task    {self.samples}",
                 f"mean total return   {self.mean_return:.6g} "
                 f"(std {self.std_return:.6g}, stderr {self.stderr:.3g})",
                 f"greedy mean return  {self.greedy_mean_return:.6g}"]
        if self.ladder:
            lines.append("ladder              " + "  ".join(f"{k}={v:.4g}"
                                                          for k, v in self.ladder.items()))
        for k, v in self.pass_at_k.items():
            lines.append(f"pass@{k:<15}{v:.4g}")
        return "\n".join(lines)


def evaluate_policies(env: Environment, tasks: Sequence[TaskSpec],
                      policies: Sequence[PolicyParams], samples: int, ks: Sequence[int],
                      seed: int = 0) -> EvaluationReport:
    """``samples`` sampled episodes plus one greedy episode per task.

    A sampled episode passes when the last turn's test fraction is 1.
    """
    check_compatible(env, policies)
    if samples < 1:
        raise ContractError("samples must be positive")
    draws = env.horizon * env.n_agents
    all_returns = []
    levels = np.zeros(4)
    has_ladder = False
    per_task = []
    for idx, task in enumerate(tasks):
        streams = member_streams(seed, "eval", idx, samples, draws)
        returns, passes = [], []
        for rng in streams:
            turns = rollout_member(env, policies, task, rng)
            returns.append(sum(t.reward for t in turns))
            last = turns[-1].breakdown
            if last is not None:
                has_ladder = True
                passes.append(last.passed_tests)
                for t in turns:
                    levels += t.breakdown.as_tuple()
        greedy = rollout_member(env, policies, task, None, greedy=True)
        te = TaskEvaluation(task.task_id, float(np.mean(returns)),
                            float(sum(t.reward for t in greedy)))
        if passes:
            te.passes = int(sum(passes))
            te.greedy_pass = greedy[-1].breakdown.passed_tests
            te.pass_at_k = {k: pass_at_k(passes, k) for k in ks}
        per_task.append(te)
        all_returns.extend(returns)
    arr = np.asarray(all_returns, dtype=float)
    n = len(arr)
    std = float(arr.std(ddof=1)) if n > 1 else 0.0
    ladder = None
    if has_ladder:
        ladder = dict(zip(LEVEL_NAMES, (float(x) for x in levels / n)))
    pk = {}
    if has_ladder:
        pk = {k: float(np.mean([t.pass_at_k[k] for t in per_task])) for k in ks}
    return EvaluationReport(samples, float(arr.mean()), std, std / math.sqrt(n),
                            float(np.mean([t.greedy_return for t in per_task])), ladder, pk,
                            per_task)


def evaluate(checkpoint: str | Path, cfg: ExperimentConfig,
             samples: int | None = None) -> EvaluationReport:
    env, tasks = build_env(cfg)
    policies = load_policies(checkpoint)
    return evaluate_policies(env, tasks, policies, samples or cfg.eval.samples, cfg.eval.k,
                             cfg.seed)


# --- game analysis ---------------------------------------------------------

def game_from_config(cfg: ExperimentConfig) -> tuple[BimatrixGame, np.ndarray]:
    e = cfg.env
    if e.name != "matrix":
        raise ContractError("analyze-game needs a matrix environment")
    if e.preset is not None:
        joint, payoffs = PRESETS[e.preset]
    else:
        joint, payoffs = e.joint_utility, e.payoffs
    if payoffs is None:
        raise ContractError("analyze-game needs per-agent payoffs (preset posg1/posg2 or env.payoffs)")
    return BimatrixGame(payoffs[0], payoffs[1]), np.asarray(joint, dtype=float)


def analyze_game(cfg: ExperimentConfig) -> EquilibriumReport:
    game, joint = game_from_config(cfg)
    return suboptimality_report(game, joint)


# --- plot export -----------------------------------------------------------

@dataclass
class ExportSummary:
    rows: int
    skipped: int
    columns: list[str]
    warnings: list[str] = field(default_factory=list)


def read_log(path: str | Path) -> tuple[list[dict], int, list[str]]:
    """Valid episode records, number of skipped lines, and warnings."""
    records: list[dict] = []
    skipped = 0
    warnings: list[str] = []
    lines = Path(path).read_text().splitlines()
    if not lines:
        return records, 0, ["log is empty"]
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError:
        head = None
    if isinstance(head, dict) and "schema" in head:
        if head["schema"] != SCHEMA or head.get("version") != SCHEMA_VERSION:
            warnings.append(f"unexpected schema {head.get('schema')!r} v{head.get('version')}")
        body = lines[1:]
    else:
        warnings.append("log has no schema header")
        body = lines
    last = -1
    for line in body:
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            skipped += 1
            continue
        if (not isinstance(rec, dict) or not isinstance(rec.get("episode"), int)
                or not isinstance(rec.get("total_return_mean"), (int, float))
                or rec["episode"] <= last):
            skipped += 1
            continue
        last = rec["episode"]
        records.append(rec)
    if skipped:
        warnings.append(f"skipped {skipped} corrupt line(s)")
    if not records:
        warnings.append("log has no episode records")
    return records, skipped, warnings


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def export_plot_data(log_path: str | Path, out_path: str | Path,
                     moving_average: int | None = None) -> ExportSummary:
    """Write a CSV with one row per episode record.

    Columns: episode, total return mean/std, ladder levels (coop logs only),
    ``turn_t_reward`` and ``turn_t_return`` for each turn, and a trailing
    moving average of the total return when a window is given.
    """
    records, skipped, warnings = read_log(log_path)
    horizon = max((len(r.get("turn_rewards", ())) for r in records), default=0)
    has_ladder = any("ladder" in r for r in records)
    columns = ["episode", "total_return_mean", "total_return_std"]
    if has_ladder:
        columns += list(LEVEL_NAMES)
    for t in range(1, horizon + 1):
        columns += [f"turn_{t}_reward", f"turn_{t}_return"]
    if moving_average:
        columns.append(f"total_return_ma{moving_average}")
    totals = [float(r["total_return_mean"]) for r in records]
    with open(out_path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for n, r in enumerate(records):
            row = [str(r["episode"]), _fmt(r["total_return_mean"]), _fmt(r.get("total_return_std"))]
            if has_ladder:
                lad = r.get("ladder") or {}
                row += [_fmt(lad.get(k)) for k in LEVEL_NAMES]
            tr, tt = r.get("turn_rewards", []), r.get("turn_returns", [])
            for t in range(horizon):
                row += [_fmt(tr[t] if t < len(tr) else None), _fmt(tt[t] if t < len(tt) else None)]
            if moving_average:
                window = totals[max(0, n + 1 - moving_average):n + 1]
                row.append(_fmt(sum(window) / len(window)))
            w.writerow(row)
    return ExportSummary(len(records), skipped, columns, warnings)


def final_window_means(records: Sequence[dict], fraction: float = 0.1) -> dict:
    """Mean per-turn rewards and total return over the last ``fraction`` of episodes."""
    if not records:
        raise ContractError("no records")
    n = max(1, int(round(len(records) * fraction)))
    tail = records[-n:]
    turns = np.mean([r["turn_rewards"] for r in tail], axis=0)
    return {"episodes": n, "turn_rewards": [float(x) for x in turns],
            "total_return": float(np.mean([r["total_return_mean"] for r in tail]))}
