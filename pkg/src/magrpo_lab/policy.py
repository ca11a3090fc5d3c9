"""Tabular softmax policies over a finite response catalog.

Each agent owns a table of logit rows keyed by canonical history key. Rows
that were never updated read as zeros, i.e. the uniform policy.
"""
from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import ContractError, HistoryKey, ResponseAction

LogitGradient = dict[HistoryKey, np.ndarray]

CHECKPOINT_HEADER = "# magrpo-lab policy checkpoint v1"


@dataclass(frozen=True)
class PolicyParams:
    agent: int
    catalog: tuple[str, ...]
    logits: dict[HistoryKey, np.ndarray] = field(default_factory=dict)
    version: int = 0
    _probs: dict = field(default_factory=dict, repr=False, compare=False)
    _cdfs: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def uniform(cls, agent: int, catalog: Sequence[str]) -> "PolicyParams":
        return cls(agent, tuple(catalog))

    @property
    def n_actions(self) -> int:
        return len(self.catalog)

    @property
    def actions(self) -> tuple[ResponseAction, ...]:
        return _catalog_actions(self.catalog)

    def row(self, key: HistoryKey) -> np.ndarray:
        row = self.logits.get(key)
        return np.zeros(self.n_actions) if row is None else row.copy()


@lru_cache(maxsize=64)
def _catalog_actions(catalog: tuple[str, ...]) -> tuple[ResponseAction, ...]:
    return tuple(ResponseAction(i, entry) for i, entry in enumerate(catalog))


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def action_distribution(params: PolicyParams, key: HistoryKey) -> np.ndarray:
    # Rows are never mutated in place, so probabilities are cached per snapshot.
    p = params._probs.get(key)
    if p is None:
        row = params.logits.get(key)
        if row is None:
            p = np.full(params.n_actions, 1.0 / params.n_actions)
        else:
            p = softmax(row)
        p.setflags(write=False)
        params._probs[key] = p
    return p


def _cdf(params: PolicyParams, key: HistoryKey) -> list[float]:
    cdf = params._cdfs.get(key)
    if cdf is None:
        cdf = params._cdfs[key] = np.cumsum(action_distribution(params, key)).tolist()
    return cdf


def sample_index(params: PolicyParams, key: HistoryKey, rng) -> int:
    """Inverse-CDF draw using one ``rng.random()`` call; zero-mass actions are never drawn."""
    cdf = _cdf(params, key)
    i = bisect.bisect_right(cdf, rng.random() * cdf[-1])
    if i == len(cdf):
        i = bisect.bisect_left(cdf, cdf[-1])
    return i


def sample_action(params: PolicyParams, key: HistoryKey, rng) -> ResponseAction:
    return params.actions[sample_index(params, key, rng)]


def greedy_action(params: PolicyParams, key: HistoryKey) -> ResponseAction:
    return params.actions[int(np.argmax(action_distribution(params, key)))]


def log_prob(params: PolicyParams, key: HistoryKey, a: int) -> float:
    z = params.row(key)
    m = z.max()
    return float(z[a] - m - math.log(np.exp(z - m).sum()))


def log_prob_gradient(params: PolicyParams, key: HistoryKey, a: int) -> LogitGradient:
    """Gradient of ``log pi(a | key)`` w.r.t. the logits: ``onehot(a) - p``."""
    if not 0 <= a < params.n_actions:
        raise ContractError(f"action {a} outside catalog of {params.n_actions}")
    g = -action_distribution(params, key)
    g[a] += 1.0
    return {key: g}


def add_scaled(acc: LogitGradient, grad: LogitGradient, scale: float) -> LogitGradient:
    for key, row in grad.items():
        if key in acc:
            acc[key] = acc[key] + scale * row
        else:
            acc[key] = scale * row
    return acc


def apply_update(params: PolicyParams, gradient: LogitGradient,
                 learning_rate: float) -> PolicyParams:
    """Gradient ascent step; returns a new snapshot with ``version + 1``."""
    if not learning_rate > 0:
        raise ContractError(f"learning rate must be positive, got {learning_rate}")
    logits = dict(params.logits)
    for key, g in gradient.items():
        g = np.asarray(g, dtype=float)
        if g.shape != (params.n_actions,):
            raise ContractError(f"gradient row for {key!r} has shape {g.shape}")
        if not np.all(np.isfinite(g)):
            raise ContractError(f"non-finite gradient component in row {key!r}")
        base = logits.get(key)
        logits[key] = (np.zeros(params.n_actions) if base is None else base) + learning_rate * g
    return PolicyParams(params.agent, params.catalog, logits, params.version + 1)


def save_policies(policies: Iterable[PolicyParams], path: str | Path) -> None:
    """Write a sorted, tab-separated checkpoint.

    Keys are JSON-derived and never contain tabs or newlines; logits are
    written with ``repr`` so they round-trip exactly.
    """
    lines = [CHECKPOINT_HEADER]
    for p in sorted(policies, key=lambda p: p.agent):
        lines.append(f"agent\t{p.agent}\t{p.version}\t{len(p.catalog)}")
        for i, entry in enumerate(p.catalog):
            lines.append(f"catalog\t{p.agent}\t{i}\t{json.dumps(entry)}")
        for key in sorted(p.logits):
            for a, z in enumerate(p.logits[key]):
                if z != 0.0:
                    lines.append(f"logit\t{p.agent}\t{key}\t{a}\t{float(z)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_policies(path: str | Path) -> list[PolicyParams]:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != CHECKPOINT_HEADER:
        raise ContractError(f"{path} is not a policy checkpoint")
    meta: dict[int, tuple[int, int]] = {}
    catalogs: dict[int, dict[int, str]] = {}
    logits: dict[int, dict[str, np.ndarray]] = {}
    for line in text[1:]:
        if not line:
            continue
        kind, agent, *rest = line.split("\t")
        agent_id = int(agent)
        if kind == "agent":
            meta[agent_id] = (int(rest[0]), int(rest[1]))
        elif kind == "catalog":
            catalogs.setdefault(agent_id, {})[int(rest[0])] = json.loads(rest[1])
        elif kind == "logit":
            key, a, z = rest
            size = meta[agent_id][1]
            row = logits.setdefault(agent_id, {}).setdefault(key, np.zeros(size))
            row[int(a)] = float(z)
        else:
            raise ContractError(f"unknown checkpoint record {kind!r}")
    out = []
    for agent_id in sorted(meta):
        version, size = meta[agent_id]
        cat = catalogs.get(agent_id, {})
        out.append(PolicyParams(agent_id, tuple(cat[i] for i in range(size)),
                                logits.get(agent_id, {}), version))
    return out
