"""Multi-agent group relative policy optimization.

Each episode samples one task, rolls out ``G`` joint trajectories under the
frozen policies, turns the shared joint rewards into group-relative
advantages and takes one gradient-ascent step per agent. Agents act on their
own histories only; the advantage is the same joint signal for all of them.
"""
from __future__ import annotations

import time
import zlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Callable, Sequence

import numpy as np

from .core import (
    ContractError,
    Environment,
    History,
    JointAction,
    Observation,
    TaskSpec,
)
from .policy import (
    LogitGradient,
    PolicyParams,
    action_distribution,
    apply_update,
    greedy_action,
    sample_action,
)

BRANCH_MODES = ("whole_group", "shared_prefix")


@dataclass(frozen=True)
class TrainConfig:
    group_size: int = 32
    learning_rate: float = 0.1
    episodes: int = 500
    branch_mode: str = "whole_group"
    seed: int = 0
    horizon: int | None = None  # None: take the environment's horizon

    def __post_init__(self):
        if self.group_size < 2:
            raise ContractError(f"group_size must be >= 2 for a group-relative baseline, "
                                f"got {self.group_size}")
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be positive")
        if self.episodes < 0:
            raise ContractError("episodes must be nonnegative")
        if self.branch_mode not in BRANCH_MODES:
            raise ContractError(f"branch_mode must be one of {BRANCH_MODES}")


# --- random streams -------------------------------------------------------

@lru_cache(maxsize=None)
def _stream_key(seed: int, name: str) -> np.ndarray:
    key = np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(2, np.uint64)
    key.setflags(write=False)
    return key


def named_stream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Counter-based generator for the stream ``(seed, name, *index)``.

    Up to two trailing indices (e.g. episode and group member) select the high
    counter words, so streams never overlap and do not depend on the order in
    which they are created.
    """
    if len(index) > 2:
        raise ValueError("at most two stream indices")
    counter = np.array([0, 0, *index, *([0] * (2 - len(index)))], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=_stream_key(seed, name), counter=counter))


class MemberStream:
    """Pre-drawn uniforms for one group member; ``random()`` consumes them in order."""

    __slots__ = ("_values", "_pos")

    def __init__(self, values: Sequence[float]):
        self._values = list(values)
        self._pos = 0

    def random(self) -> float:
        if self._pos >= len(self._values):
            raise ContractError("member stream exhausted")
        u = self._values[self._pos]
        self._pos += 1
        return u


def member_streams(seed: int, name: str, episode: int, group_size: int,
                   draws: int) -> list[MemberStream]:
    """Streams for members ``0..G-1`` of one episode.

    Member ``g`` gets row ``g`` of a single counter-based block keyed by
    ``(seed, name, episode)``, so its draws do not depend on how many
    members exist before it or on scheduling order.
    """
    block = named_stream(seed, name, episode).random((group_size, draws))
    return [MemberStream(row) for row in block.tolist()]


# --- rollouts -------------------------------------------------------------

@dataclass(frozen=True)
class MemberTurn:
    histories: tuple[History, ...]  # conditioning history of each agent
    joint: JointAction
    reward: float
    observations: tuple[Observation, ...]
    breakdown: Any = None
    agent_rewards: tuple[float, ...] | None = None


@dataclass(frozen=True)
class GroupRollout:
    task: TaskSpec
    members: tuple[tuple[MemberTurn, ...], ...]
    versions: tuple[int, ...]

    @property
    def group_size(self) -> int:
        return len(self.members)

    @property
    def horizon(self) -> int:
        return len(self.members[0])

    @property
    def n_agents(self) -> int:
        return len(self.versions)

    def rewards(self) -> np.ndarray:
        return np.array([[m.reward for m in member] for member in self.members], dtype=float)

    def agent_rewards(self) -> np.ndarray:
        """Per-agent attributed rewards, shape (n_agents, G, H)."""
        out = np.empty((self.n_agents, self.group_size, self.horizon))
        for g, member in enumerate(self.members):
            for t, m in enumerate(member):
                if m.agent_rewards is None:
                    raise ContractError("environment did not attribute per-agent rewards")
                out[:, g, t] = m.agent_rewards
        return out


def rollout_member(env: Environment, policies: Sequence[PolicyParams], task: TaskSpec,
                   rng: np.random.Generator | None, greedy: bool = False) -> tuple[MemberTurn, ...]:
    """Run one full episode. ``greedy`` takes argmax actions and ignores ``rng``."""
    state, obs = env.reset(task)
    hists = [History.start(o) for o in obs]
    turns = []
    for t in range(env.horizon):
        actions: list = []
        for i, policy in enumerate(policies):
            h = hists[i]
            if env.sequential_mode and i > 0:
                h = h.replace_last(
                    env.sequential_observation(state, i, h.last_observation, tuple(actions)))
                hists[i] = h
            a = greedy_action(policy, h.key) if greedy else sample_action(policy, h.key, rng)
            actions.append(a)
        joint = tuple(actions)
        res = env.step(state, joint)
        turns.append(MemberTurn(tuple(hists), joint, res.reward, res.observations,
                                res.breakdown, res.agent_rewards))
        if res.done != (t == env.horizon - 1):
            raise ContractError(f"environment reported done={res.done} at turn {t}")
        if not res.done:
            hists = [h.append(a, o) for h, a, o in zip(hists, joint, res.observations)]
        state = res.state
    return tuple(turns)


def collect_group_rollouts(envs: Sequence[Environment], policies: Sequence[PolicyParams],
                           task: TaskSpec, streams: Sequence[np.random.Generator],
                           executor=None) -> GroupRollout:
    """Roll out one member per environment instance against frozen policies.

    ``streams[g]`` drives member ``g``. With an ``executor`` the members run
    concurrently; results are still ordered by member index.
    """
    if len(envs) != len(streams):
        raise ContractError("need exactly one random stream per environment instance")
    if len(policies) != envs[0].n_agents:
        raise ContractError(f"{len(policies)} policies for {envs[0].n_agents} agents")
    jobs = [(env, policies, task, rng) for env, rng in zip(envs, streams)]
    if executor is None:
        members = [rollout_member(*job) for job in jobs]
    else:
        members = list(executor.map(lambda job: rollout_member(*job), jobs))
    return GroupRollout(task, tuple(members), tuple(p.version for p in policies))


# --- returns, branches, advantages ----------------------------------------

def compute_returns(rollout_or_rewards) -> np.ndarray:
    """Undiscounted reward-to-go ``R[g, t] = sum_{tau >= t} r[g, tau]``."""
    if isinstance(rollout_or_rewards, GroupRollout):
        rewards = rollout_or_rewards.rewards()
    else:
        rewards = np.asarray(rollout_or_rewards, dtype=float)
    returns = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[:-1])
    for t in range(rewards.shape[-1] - 1, -1, -1):
        running = running + rewards[..., t]
        returns[..., t] = running
    return returns


BranchPartition = list[list[list[int]]]


def whole_group_partition(group_size: int, horizon: int) -> BranchPartition:
    return [[list(range(group_size))] for _ in range(horizon)]


def shared_prefix_partition(rollout: GroupRollout) -> BranchPartition:
    """Members whose joint interaction up to turn ``t`` is identical share a branch."""
    partition = []
    for t in range(rollout.horizon):
        groups: dict[tuple, list[int]] = {}
        for g, member in enumerate(rollout.members):
            prefix = tuple(
                (tuple(a.catalog_index for a in m.joint), tuple(o.tokens for o in m.observations))
                for m in member[:t]
            )
            groups.setdefault(prefix, []).append(g)
        partition.append(list(groups.values()))
    return partition


def branch_partition(rollout: GroupRollout, mode: str) -> BranchPartition:
    if mode == "whole_group":
        return whole_group_partition(rollout.group_size, rollout.horizon)
    if mode == "shared_prefix":
        return shared_prefix_partition(rollout)
    raise ContractError(f"unknown branch mode {mode!r}")


def compute_advantages(returns: np.ndarray, partition: BranchPartition) -> np.ndarray:
    """Return minus the mean return of the member's branch at the same turn.

    Computed as ``(R_g - R_ref) - mean(R_j - R_ref)`` with ``R_ref`` the first
    member of the branch; this equals ``R_g - mean(R_j)`` and makes a common
    reward shift cancel bit-for-bit whenever the shifted rewards are exact.
    Works on (G, H) or (n_agents, G, H) arrays.
    """
    returns = np.asarray(returns, dtype=float)
    adv = np.zeros_like(returns)
    G, H = returns.shape[-2:]
    for t in range(H):
        seen = sorted(g for branch in partition[t] for g in branch)
        if seen != list(range(G)):
            raise ContractError(f"partition at turn {t} does not cover each member once")
        for branch in partition[t]:
            vals = returns[..., branch, t]
            d = vals - vals[..., :1]
            adv[..., branch, t] = d - d.mean(axis=-1, keepdims=True)
    return adv


# --- objective gradient ---------------------------------------------------

def accumulate_objective_gradient(rollout: GroupRollout, advantages: np.ndarray,
                                  policies: Sequence[PolicyParams],
                                  partition: BranchPartition | None = None) -> list[LogitGradient]:
    """Per-agent gradient of the branch-averaged objective.

    ``advantages`` is (G, H) for a joint signal shared by every agent, or
    (n_agents, G, H) for per-agent signals. Each term is weighted by
    ``1 / (#branches at t * branch size)``; members are reduced in index order.
    Turn-t rows are disjoint from other turns' rows, so summing over turns
    equals updating turn by turn.
    """
    n, G, H = rollout.n_agents, rollout.group_size, rollout.horizon
    adv = np.asarray(advantages, dtype=float)
    if adv.shape == (G, H):
        adv = np.broadcast_to(adv, (n, G, H))
    if adv.shape != (n, G, H):
        raise ContractError(f"advantages of shape {np.shape(advantages)} do not match rollout")
    if len(policies) != n:
        raise ContractError(f"{len(policies)} policies for {n} agents")
    for p, v in zip(policies, rollout.versions):
        if p.version != v:
            raise ContractError(
                f"agent {p.agent}: rollout drawn under version {v}, updating version {p.version}")
    if partition is None:
        partition = whole_group_partition(G, H)

    # coef[key][a] accumulates sum of w * A for action a; total[key] its row sum.
    coef: list[dict[str, np.ndarray]] = [{} for _ in range(n)]
    total: list[dict[str, float]] = [{} for _ in range(n)]
    for t in range(H):
        n_branches = len(partition[t])
        for branch in partition[t]:
            w = 1.0 / (n_branches * len(branch))
            for g in sorted(branch):
                m = rollout.members[g][t]
                for i in range(n):
                    scaled = w * adv[i, g, t]
                    key = m.histories[i].key
                    row = coef[i].get(key)
                    if row is None:
                        row = coef[i][key] = np.zeros(policies[i].n_actions)
                        total[i][key] = 0.0
                    row[m.joint[i].catalog_index] += scaled
                    total[i][key] += scaled
    grads = []
    for i in range(n):
        grads.append({key: row - total[i][key] * action_distribution(policies[i], key)
                      for key, row in coef[i].items()})
    return grads


# --- training loop --------------------------------------------------------

@dataclass
class TrainResult:
    policies: list[PolicyParams]
    metrics: list[dict] = field(default_factory=list)


def episode_metrics(episode: int, rollout: GroupRollout, returns: np.ndarray,
                    wall_clock: float | None = None) -> dict:
    rewards = rollout.rewards()
    totals = returns[:, 0]
    rec: dict[str, Any] = {
        "episode": episode,
        "task_id": rollout.task.task_id,
        "total_return_mean": float(totals.mean()),
        "total_return_std": float(totals.std()),
        "turn_rewards": [float(x) for x in rewards.mean(axis=0)],
        "turn_returns": [float(x) for x in returns.mean(axis=0)],
    }
    first = rollout.members[0][0].breakdown
    if first is not None and hasattr(first, "as_tuple"):
        levels = np.zeros(4)
        for member in rollout.members:
            for m in member:
                levels += m.breakdown.as_tuple()
        levels /= rollout.group_size
        rec["ladder"] = dict(zip(("structure", "syntax", "test", "coop"),
                                 (float(x) for x in levels)))
    if rollout.members[0][0].agent_rewards is not None:
        rec["agent_returns"] = [float(x) for x in rollout.agent_rewards().sum(axis=2).mean(axis=1)]
    if wall_clock is not None:
        rec["wall_clock"] = wall_clock
    return rec


def _initial_policies(env: Environment, policies) -> list[PolicyParams]:
    if policies is None:
        return [PolicyParams.uniform(i, env.catalog(i)) for i in range(env.n_agents)]
    policies = list(policies)
    for i, p in enumerate(policies):
        if tuple(env.catalog(i)) != p.catalog:
            raise ContractError(f"policy {i} catalog does not match the environment")
    return policies


def _train_loop(config: TrainConfig, env_factory: Callable[[], Environment],
                dataset: Sequence[TaskSpec], policies, per_agent: bool,
                on_episode: Callable[[dict], None] | None, executor, record_time: bool) -> TrainResult:
    if not dataset:
        raise ContractError("dataset is empty")
    envs = [env_factory() for _ in range(config.group_size)]
    horizon = envs[0].horizon
    if config.horizon is not None and config.horizon != horizon:
        raise ContractError(f"config horizon {config.horizon} != environment horizon {horizon}")
    if per_agent and not getattr(envs[0], "has_decomposition", False):
        raise ContractError("independent learners need a per-agent reward decomposition")
    policies = _initial_policies(envs[0], policies)
    result = TrainResult(policies)
    start = time.perf_counter()
    for episode in range(config.episodes):
        task = dataset[int(named_stream(config.seed, "task", episode).integers(len(dataset)))]
        streams = member_streams(config.seed, "rollout", episode, config.group_size,
                                 horizon * envs[0].n_agents)
        rollout = collect_group_rollouts(envs, policies, task, streams, executor)
        partition = branch_partition(rollout, config.branch_mode)
        returns = compute_returns(rollout)
        signal = compute_returns(rollout.agent_rewards()) if per_agent else returns
        advantages = compute_advantages(signal, partition)
        grads = accumulate_objective_gradient(rollout, advantages, policies, partition)
        policies = [apply_update(p, g, config.learning_rate) for p, g in zip(policies, grads)]
        rec = episode_metrics(episode, rollout, returns,
                              time.perf_counter() - start if record_time else None)
        result.metrics.append(rec)
        if on_episode is not None:
            on_episode(rec)
    result.policies = policies
    return result


def train(config: TrainConfig, env_factory: Callable[[], Environment],
          dataset: Sequence[TaskSpec], policies: Sequence[PolicyParams] | None = None, *,
          on_episode: Callable[[dict], None] | None = None, executor=None,
          record_time: bool = False) -> TrainResult:
    """Train all agents on the shared joint reward."""
    return _train_loop(config, env_factory, dataset, policies, False, on_episode, executor,
                       record_time)


def train_independent(config: TrainConfig, env_factory: Callable[[], Environment],
                      dataset: Sequence[TaskSpec], policies: Sequence[PolicyParams] | None = None,
                      *, on_episode: Callable[[dict], None] | None = None, executor=None,
                      record_time: bool = False) -> TrainResult:
    """Baseline where each agent's advantage comes from its own attributed reward."""
    return _train_loop(config, env_factory, dataset, policies, True, on_episode, executor,
                       record_time)


def greedy_joint_action(env: Environment, policies: Sequence[PolicyParams],
                        task: TaskSpec) -> tuple[int, ...]:
    """Catalog indices of the argmax joint action at turn 0."""
    turns = rollout_member(env, policies, task, None, greedy=True)
    return tuple(a.catalog_index for a in turns[0].joint)
