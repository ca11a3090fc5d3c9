"""One-step 2x2 cooperative matrix games and their per-agent decompositions."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..core import (
    AccessibleState,
    ContractError,
    EnvState,
    JointAction,
    Observation,
    StepResult,
    TaskSpec,
    TurnRecord,
    UserState,
    check_joint_action,
)

ACTIONS = ("A1", "A2")

# Joint utility of the cooperative game and two reward decompositions of it.
TABLE3 = ((10.0, 7.0), (7.0, 0.0))
POSG1 = (((5.0, 3.0), (4.0, 0.0)), ((5.0, 4.0), (3.0, 0.0)))
POSG2 = (((5.0, 1.0), (6.0, 0.0)), ((5.0, 6.0), (1.0, 0.0)))

MATRIX_TASK = TaskSpec(task_id=0, target_value=0, prompt_fragment=("MATRIX",))

PRESETS = {
    "table3": (TABLE3, None),
    "posg1": (TABLE3, POSG1),
    "posg2": (TABLE3, POSG2),
}


def _as_matrix(m) -> tuple[tuple[float, float], tuple[float, float]]:
    arr = np.asarray(m, dtype=float)
    if arr.shape != (2, 2) or not np.all(np.isfinite(arr)):
        raise ContractError(f"expected a finite 2x2 matrix, got {m!r}")
    return (tuple(arr[0]), tuple(arr[1]))  # type: ignore[return-value]


@dataclass(frozen=True)
class MatrixGameEnv:
    """Horizon-1 game; the joint reward is the utility cell of the joint action.

    ``payoffs`` optionally holds per-agent matrices (row player is agent 0)
    used as the reward attribution for independent learners.
    """

    joint_utility: tuple[tuple[float, float], tuple[float, float]] = TABLE3
    payoffs: tuple | None = None
    n_agents: int = 2
    horizon: int = 1
    sequential_mode: bool = False

    def __post_init__(self):
        object.__setattr__(self, "joint_utility", _as_matrix(self.joint_utility))
        if self.payoffs is not None:
            if len(self.payoffs) != 2:
                raise ContractError("a decomposition needs one matrix per agent")
            object.__setattr__(self, "payoffs", tuple(_as_matrix(p) for p in self.payoffs))

    @classmethod
    def preset(cls, name: str) -> "MatrixGameEnv":
        try:
            joint, payoffs = PRESETS[name]
        except KeyError:
            raise ContractError(f"unknown matrix preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(joint, payoffs)

    @property
    def has_decomposition(self) -> bool:
        return self.payoffs is not None

    def catalog(self, agent: int) -> tuple[str, ...]:
        return ACTIONS

    def reset(self, task: TaskSpec = MATRIX_TASK) -> tuple[EnvState, tuple[Observation, ...]]:
        return _matrix_reset(task)

    def step(self, state: EnvState, joint: JointAction) -> StepResult:
        if state.done:
            raise ContractError("step called on a finished episode")
        check_joint_action(self, joint)
        reward = matrix_reward(self, joint)
        agent_rewards = None
        if self.payoffs is not None:
            i, j = joint[0].catalog_index, joint[1].catalog_index
            agent_rewards = (self.payoffs[0][i][j], self.payoffs[1][i][j])
        obs = _END_OBS
        acc = state.accessible
        new_acc = AccessibleState(acc.task, acc.records + (TurnRecord(joint, reward, obs),))
        return StepResult(reward, EnvState(new_acc, state.user, True), obs, True,
                          None, agent_rewards)


_END_OBS = tuple(Observation(("END",), i, 1) for i in range(2))


@lru_cache(maxsize=256)
def _matrix_reset(task: TaskSpec) -> tuple[EnvState, tuple[Observation, ...]]:
    obs = tuple(Observation(task.prompt_fragment, i, 0) for i in range(2))
    return EnvState(AccessibleState(task), UserState()), obs


def matrix_reward(env: MatrixGameEnv, joint: JointAction) -> float:
    return env.joint_utility[joint[0].catalog_index][joint[1].catalog_index]
