"""Dec-POMDP vocabulary shared by every environment and learner.

Agents are dense integer indices. Observations are token tuples, actions are
indices into a finite per-agent response catalog, and histories are immutable
alternating observation/action sequences.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Protocol, Sequence


class ContractError(Exception):
    """A caller violated an operation's precondition."""


Tokens = tuple[str, ...]
HistoryKey = str


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    target_value: int
    prompt_fragment: Tokens


@dataclass(frozen=True)
class Observation:
    tokens: Tokens
    agent: int
    turn: int


@dataclass(frozen=True)
class ResponseAction:
    catalog_index: int
    rendered: str


JointAction = tuple[ResponseAction, ...]


@dataclass(frozen=True)
class TurnRecord:
    joint_action: JointAction
    joint_reward: float
    observations_emitted: tuple[Observation, ...]


@dataclass(frozen=True)
class AccessibleState:
    """The part of the state the reward model may read."""

    task: TaskSpec
    records: tuple[TurnRecord, ...] = ()

    @property
    def turn(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class UserState:
    """Hidden environment parameters; never rendered into observations."""

    hidden_params: tuple[tuple[str, Any], ...] = ()

    def get(self, name: str, default: Any = None) -> Any:
        return dict(self.hidden_params).get(name, default)

    def updated(self, **changes: Any) -> "UserState":
        params = dict(self.hidden_params)
        params.update(changes)
        return UserState(tuple(sorted(params.items())))


@dataclass(frozen=True)
class EnvState:
    accessible: AccessibleState
    user: UserState
    done: bool = False


@dataclass(frozen=True)
class StepResult:
    reward: float
    state: EnvState
    observations: tuple[Observation, ...]
    done: bool
    breakdown: Any = None
    agent_rewards: tuple[float, ...] | None = None


@lru_cache(maxsize=1 << 16)
def _tokens_json(tokens: Tokens) -> str:
    return json.dumps(list(tokens), separators=(",", ":"), ensure_ascii=True)


def _obs_json(obs: Observation) -> str:
    return _tokens_json(obs.tokens)


@dataclass(frozen=True, eq=True)
class History:
    """Observation/action history ``o_0, a_0, ..., o_t`` of one agent.

    Appending returns a new history, so group members can share prefixes
    without aliasing.
    """

    agent: int
    entries: tuple[Observation | ResponseAction, ...]
    _key: str = field(default="", compare=False, repr=False)

    @classmethod
    def start(cls, obs: Observation) -> "History":
        return _start_history(obs)

    def __post_init__(self):
        # Internal constructors pass a precomputed key for an already-valid history.
        if not self._key:
            validate_history(self)
            object.__setattr__(self, "_key", _serialize(self))

    @property
    def last_observation(self) -> Observation:
        return self.entries[-1]  # type: ignore[return-value]

    @property
    def awaiting_action(self) -> bool:
        return isinstance(self.entries[-1], Observation)

    @property
    def turn(self) -> int:
        return len(self.entries) // 2

    def actions(self) -> tuple[ResponseAction, ...]:
        return self.entries[1::2]  # type: ignore[return-value]

    def append(self, action: ResponseAction, obs: Observation) -> "History":
        return history_append(self, action, obs)

    def replace_last(self, obs: Observation) -> "History":
        """Swap the pending observation, e.g. to show a peer's same-turn output."""
        if not self.awaiting_action:
            raise ContractError("history does not end with an observation")
        if obs.agent != self.agent:
            raise ContractError(f"observation for agent {obs.agent} given to agent {self.agent}")
        return History(self.agent, self.entries[:-1] + (obs,))

    @property
    def key(self) -> HistoryKey:
        return self._key


@lru_cache(maxsize=1 << 12)
def _start_history(obs: Observation) -> History:
    return History(obs.agent, (obs,), f"{obs.agent}:[{_obs_json(obs)}]")


def validate_history(h: History) -> None:
    if not h.entries:
        raise ContractError("history must begin with an observation")
    for pos, entry in enumerate(h.entries):
        want = Observation if pos % 2 == 0 else ResponseAction
        if not isinstance(entry, want):
            raise ContractError(
                f"entry {pos} is {type(entry).__name__}, expected {want.__name__}"
            )
        if isinstance(entry, Observation) and entry.agent != h.agent:
            raise ContractError(f"entry {pos} belongs to agent {entry.agent}, not {h.agent}")


def _serialize(h: History) -> str:
    parts = []
    for entry in h.entries:
        if isinstance(entry, Observation):
            parts.append(_obs_json(entry))
        else:
            parts.append(str(entry.catalog_index))
    return f"{h.agent}:[{','.join(parts)}]"


def history_append(h: History, action: ResponseAction, obs: Observation) -> History:
    if not h.awaiting_action:
        raise ContractError("cannot append an action: history ends with an action")
    if obs.agent != h.agent:
        raise ContractError(f"observation for agent {obs.agent} appended to agent {h.agent}")
    key = f"{h.key[:-1]},{action.catalog_index},{_obs_json(obs)}]"
    return History(h.agent, h.entries + (action, obs), key)


def canonical_history_key(h: History) -> HistoryKey:
    """Content-derived key: agent index plus the JSON form of every entry.

    Observations serialize as JSON string arrays and actions as bare catalog
    indices, so the encoding is injective and free of hash-seed effects.
    """
    return h.key


class Environment(Protocol):
    """Contract every environment implements.

    ``reset`` builds the initial state for a caller-supplied task; ``step``
    consumes one joint action. Rewards may depend only on the accessible
    state and the joint action.
    """

    n_agents: int
    horizon: int
    sequential_mode: bool

    def catalog(self, agent: int) -> Sequence[str]: ...

    def reset(self, task: TaskSpec) -> tuple[EnvState, tuple[Observation, ...]]: ...

    def step(self, state: EnvState, joint: JointAction) -> StepResult: ...


def make_action(env: Environment, agent: int, index: int) -> ResponseAction:
    entries = env.catalog(agent)
    if not 0 <= index < len(entries):
        raise ContractError(f"action {index} outside agent {agent}'s catalog of {len(entries)}")
    return ResponseAction(index, entries[index])


def check_joint_action(env: Environment, joint: JointAction) -> None:
    if len(joint) != env.n_agents:
        raise ContractError(f"joint action has {len(joint)} entries, expected {env.n_agents}")
    for agent, action in enumerate(joint):
        entries = env.catalog(agent)
        if not 0 <= action.catalog_index < len(entries):
            raise ContractError(f"agent {agent} action {action.catalog_index} out of range")
        if entries[action.catalog_index] != action.rendered:
            raise ContractError(f"agent {agent} action rendering does not match catalog")
