"""Single-agent baseline: one policy over the product of all agents' catalogs."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from ..core import (
    ContractError,
    EnvState,
    Environment,
    JointAction,
    Observation,
    ResponseAction,
    StepResult,
    TaskSpec,
)


@dataclass(frozen=True)
class JointControlEnv:
    """Wraps an n-agent environment so a single agent picks the joint action.

    Catalog entries are the inner entries joined by ``" ; "``; index ``k``
    decodes to the k-th tuple of ``itertools.product`` over inner catalogs.
    """

    inner: Environment
    n_agents: int = 1
    sequential_mode: bool = False
    _combos: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        sizes = [range(len(self.inner.catalog(i))) for i in range(self.inner.n_agents)]
        object.__setattr__(self, "_combos", tuple(itertools.product(*sizes)))

    @property
    def horizon(self) -> int:
        return self.inner.horizon

    @property
    def has_decomposition(self) -> bool:
        return False

    def catalog(self, agent: int) -> tuple[str, ...]:
        if agent != 0:
            raise ContractError("joint-control wrapper has a single agent")
        cats = [self.inner.catalog(i) for i in range(self.inner.n_agents)]
        return tuple(" ; ".join(cats[i][k] for i, k in enumerate(c)) for c in self._combos)

    def decode(self, index: int) -> JointAction:
        if not 0 <= index < len(self._combos):
            raise ContractError(f"joint index {index} outside product catalog of {len(self._combos)}")
        combo = self._combos[index]
        return tuple(ResponseAction(k, self.inner.catalog(i)[k]) for i, k in enumerate(combo))

    def _merge(self, obs: tuple[Observation, ...]) -> tuple[Observation, ...]:
        tokens: tuple[str, ...] = ()
        for o in obs:
            tokens += (f"@{o.agent}",) + o.tokens
        return (Observation(tokens, 0, obs[0].turn),)

    def reset(self, task: TaskSpec) -> tuple[EnvState, tuple[Observation, ...]]:
        state, obs = self.inner.reset(task)
        return state, self._merge(obs)

    def step(self, state: EnvState, joint: JointAction) -> StepResult:
        if len(joint) != 1:
            raise ContractError("joint-control wrapper expects exactly one action")
        result = self.inner.step(state, self.decode(joint[0].catalog_index))
        return StepResult(result.reward, result.state, self._merge(result.observations),
                          result.done, result.breakdown, None)
