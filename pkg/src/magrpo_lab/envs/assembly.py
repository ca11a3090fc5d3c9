"""Two-agent cooperative assembly task with a gated reward ladder.

An auxiliary agent (index 0) picks a line ``AUX = <expr>`` and a main agent
(index 1) picks ``MAIN = <expr>``, where the main expression may use the
auxiliary's value through the symbol ``AUX``. The joint reward climbs four
levels (structure, syntax, test, cooperation); a level pays only when every
level below it passed in full.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

from ..core import (
    AccessibleState,
    ContractError,
    EnvState,
    JointAction,
    Observation,
    ResponseAction,
    StepResult,
    TaskSpec,
    Tokens,
    TurnRecord,
    UserState,
    check_joint_action,
)
from .expr import Expr, EvaluationError, ParseError, parse

AUX, MAIN = 0, 1
ROLES = ("aux", "main")
_LINE = re.compile(r"^\s*([A-Za-z_]+)\s*=(.*)$")

LEVELS = ("structure", "syntax", "test", "coop")


class FeedbackMode(str, Enum):
    SELF_EVOLVING = "self_evolving"
    GUIDED = "guided"


@dataclass(frozen=True)
class LadderWeights:
    structure: float = 0.25
    syntax: float = 0.25
    test: float = 0.25
    coop: float = 0.25

    def __post_init__(self):
        values = self.as_tuple()
        if any(w < 0 for w in values):
            raise ContractError(f"ladder weights must be nonnegative, got {values}")
        if abs(sum(values) - 1.0) > 1e-12:
            raise ContractError(f"ladder weights must sum to 1, got {sum(values)}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.structure, self.syntax, self.test, self.coop)


@dataclass(frozen=True)
class LadderBreakdown:
    structure: float
    syntax: float
    test: float
    coop: float
    test_fraction: float
    tag: str
    main_value: int | None = None

    @property
    def total(self) -> float:
        return self.structure + self.syntax + self.test + self.coop

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.structure, self.syntax, self.test, self.coop)

    @property
    def passed_tests(self) -> bool:
        return self.test_fraction == 1.0


def split_line(rendered: str, name: str) -> str | None:
    """Body of ``NAME = body`` or None when the shape is wrong."""
    m = _LINE.match(rendered)
    if m is None or m.group(1) != name:
        return None
    body = m.group(2).strip()
    return body or None


def _failing(flags: list[bool]) -> str:
    return ",".join(ROLES[i] for i, ok in enumerate(flags) if not ok)


@lru_cache(maxsize=1 << 16)
def ladder_evaluate(aux: ResponseAction, main: ResponseAction, task: TaskSpec,
                    weights: LadderWeights) -> LadderBreakdown:
    w = weights
    bodies = [split_line(aux.rendered, "AUX"), split_line(main.rendered, "MAIN")]
    if any(b is None for b in bodies):
        flags = [b is not None for b in bodies]
        return LadderBreakdown(0.0, 0.0, 0.0, 0.0, 0.0, f"FAIL_STRUCT({_failing(flags)})")

    parsed: list[Expr | None] = []
    for body in bodies:
        try:
            parsed.append(parse(body))
        except ParseError:
            parsed.append(None)
    if any(p is None for p in parsed):
        flags = [p is not None for p in parsed]
        return LadderBreakdown(w.structure, 0.0, 0.0, 0.0, 0.0,
                               f"FAIL_SYNTAX({_failing(flags)})")
    aux_expr, main_expr = parsed

    try:
        aux_value: int | None = aux_expr.evaluate(None)
    except EvaluationError:
        aux_value = None
    try:
        main_value: int | None = main_expr.evaluate(aux_value)
    except EvaluationError:
        main_value = None

    targets = (task.target_value,)
    if main_value is None:
        return LadderBreakdown(w.structure, w.syntax, 0.0, 0.0, 0.0,
                               "FAIL_TEST(main,UNRESOLVED)")
    fraction = sum(main_value == t for t in targets) / len(targets)
    test = w.test * fraction
    if fraction < 1.0:
        direction = "LOW" if main_value < task.target_value else "HIGH"
        return LadderBreakdown(w.structure, w.syntax, test, 0.0, fraction,
                               f"FAIL_TEST(main,{direction})", main_value)
    if not main_expr.references_aux:
        return LadderBreakdown(w.structure, w.syntax, test, 0.0, fraction,
                               "FAIL_COOP(main)", main_value)
    return LadderBreakdown(w.structure, w.syntax, test, w.coop, fraction, "ALL_PASS", main_value)


def ladder_reward(aux: ResponseAction, main: ResponseAction, task: TaskSpec,
                  weights: LadderWeights) -> tuple[float, tuple[float, float, float, float]]:
    b = ladder_evaluate(aux, main, task, weights)
    return b.total, b.as_tuple()


def generate_feedback(record: AccessibleState, mode: FeedbackMode, agent: int,
                      weights: LadderWeights = LadderWeights()) -> Tokens:
    """Feedback tokens shown to ``agent`` at the start of the next turn.

    Self-evolving feedback is the previous joint responses verbatim; guided
    feedback appends a tag from the ladder evaluator naming the first failing
    level (and, for a failed test, whether the value was too low or high).
    """
    if not record.records:
        raise ContractError("feedback needs at least one completed turn")
    if not 0 <= agent < 2:
        raise ContractError(f"no agent {agent} in a two-agent task")
    joint = record.records[-1].joint_action
    tokens = tuple(a.rendered for a in joint)
    if FeedbackMode(mode) is FeedbackMode.GUIDED:
        tokens += (ladder_evaluate(joint[AUX], joint[MAIN], record.task, weights).tag,)
    return tokens


@lru_cache(maxsize=1024)
def _assembly_reset(task: TaskSpec, feedback: FeedbackMode) -> tuple[EnvState, tuple[Observation, ...]]:
    # Reset output is immutable, so identical calls can share it.
    obs = tuple(Observation(task.prompt_fragment + ("ROLE", ROLES[i]), i, 0) for i in range(2))
    user = UserState((("feedback_style", feedback.value), ("revisions", 0)))
    return EnvState(AccessibleState(task), user), obs


@dataclass(frozen=True)
class CoopAssemblyEnv:
    dataset: tuple[TaskSpec, ...]
    aux_catalog: tuple[str, ...]
    main_catalog: tuple[str, ...]
    weights: LadderWeights = field(default_factory=LadderWeights)
    horizon: int = 1
    feedback: FeedbackMode = FeedbackMode.SELF_EVOLVING
    sequential_mode: bool = False
    n_agents: int = 2

    def __post_init__(self):
        if self.horizon < 1:
            raise ContractError("horizon must be at least 1")
        object.__setattr__(self, "feedback", FeedbackMode(self.feedback))

    def catalog(self, agent: int) -> tuple[str, ...]:
        return (self.aux_catalog, self.main_catalog)[agent]

    def reset(self, task: TaskSpec) -> tuple[EnvState, tuple[Observation, ...]]:
        return _assembly_reset(task, self.feedback)

    def sequential_observation(self, state: EnvState, agent: int, base: Observation,
                               earlier: JointAction) -> Observation:
        """Main's view after the auxiliary has answered in the same turn."""
        if agent != MAIN or not earlier:
            return base
        return Observation(base.tokens + ("PEER", earlier[AUX].rendered), agent, base.turn)

    def step(self, state: EnvState, joint: JointAction) -> StepResult:
        if state.done:
            raise ContractError("step called on a finished episode")
        check_joint_action(self, joint)
        acc = state.accessible
        breakdown = ladder_evaluate(joint[AUX], joint[MAIN], acc.task, self.weights)
        turn = acc.turn + 1
        probe = AccessibleState(acc.task, acc.records + (TurnRecord(joint, breakdown.total, ()),))
        obs = tuple(
            Observation(generate_feedback(probe, self.feedback, i, self.weights), i, turn)
            for i in range(2)
        )
        record = TurnRecord(joint, breakdown.total, obs)
        done = turn >= self.horizon
        user = state.user.updated(revisions=state.user.get("revisions", 0) + 1)
        new_state = EnvState(AccessibleState(acc.task, acc.records + (record,)), user, done)
        return StepResult(breakdown.total, new_state, obs, done, breakdown)
