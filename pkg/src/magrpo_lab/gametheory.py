"""Exact equilibrium analysis for 2x2 games and their cooperative totals.

Actions are indexed 0 (``A1``) and 1 (``A2``); agent 1 picks the row.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .core import ContractError

CELLS = tuple(itertools.product(range(2), range(2)))
ACTION_NAMES = ("A1", "A2")


@dataclass(frozen=True)
class BimatrixGame:
    u1: np.ndarray
    u2: np.ndarray

    def __post_init__(self):
        for name in ("u1", "u2"):
            m = np.array(getattr(self, name), dtype=float)
            if m.shape != (2, 2) or not np.all(np.isfinite(m)):
                raise ContractError(f"{name} must be a finite 2x2 matrix")
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @classmethod
    def from_pairs(cls, pairs) -> "BimatrixGame":
        """Build from a table of ``(u1, u2)`` cells, as payoff tables are usually written."""
        arr = np.asarray(pairs, dtype=float)
        return cls(arr[..., 0], arr[..., 1])

    def utilities(self, cell: tuple[int, int]) -> tuple[float, float]:
        return float(self.u1[cell]), float(self.u2[cell])


@dataclass(frozen=True)
class MixedStrategyProfile:
    p: float  # P(agent 1 plays A1)
    q: float  # P(agent 2 plays A1)

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0 and 0.0 <= self.q <= 1.0):
            raise ContractError(f"probabilities out of range: p={self.p}, q={self.q}")

    def weights(self) -> np.ndarray:
        return np.outer([self.p, 1 - self.p], [self.q, 1 - self.q])


def expected_value(matrix, profile: MixedStrategyProfile) -> float:
    return float((np.asarray(matrix, dtype=float) * profile.weights()).sum())


def enumerate_pure_ne(game: BimatrixGame) -> list[tuple[int, int]]:
    """Cells where both actions are (weak) best responses, in row-major order."""
    out = []
    for i, j in CELLS:
        if game.u1[i, j] >= game.u1[1 - i, j] and game.u2[i, j] >= game.u2[i, 1 - j]:
            out.append((i, j))
    return out


def indifference_solution(game: BimatrixGame) -> tuple[float | None, float | None]:
    """``(p, q)`` solving each player's opponent-indifference equation.

    ``q`` makes agent 1 indifferent between its rows and ``p`` makes agent 2
    indifferent between its columns. A component is None when its equation is
    degenerate (zero denominator).
    """
    u1, u2 = game.u1, game.u2
    den_q = u1[0, 0] - u1[0, 1] - u1[1, 0] + u1[1, 1]
    den_p = u2[0, 0] - u2[1, 0] - u2[0, 1] + u2[1, 1]
    q = None if den_q == 0 else float((u1[1, 1] - u1[0, 1]) / den_q)
    p = None if den_p == 0 else float((u2[1, 1] - u2[1, 0]) / den_p)
    return p, q


def mixed_ne_2x2(game: BimatrixGame) -> MixedStrategyProfile | None:
    """The fully mixed equilibrium, or None if there is no interior solution."""
    p, q = indifference_solution(game)
    if p is None or q is None or not (0.0 < p < 1.0 and 0.0 < q < 1.0):
        return None
    return MixedStrategyProfile(p, q)


def verify_ne(game: BimatrixGame, profile, tol: float = 1e-9) -> bool:
    """Check that no unilateral deviation to a pure strategy gains more than ``tol``."""
    if not isinstance(profile, MixedStrategyProfile):
        i, j = profile
        profile = MixedStrategyProfile(float(i == 0), float(j == 0))
    v1 = expected_value(game.u1, profile)
    v2 = expected_value(game.u2, profile)
    for a in range(2):
        dev1 = MixedStrategyProfile(float(a == 0), profile.q)
        dev2 = MixedStrategyProfile(profile.p, float(a == 0))
        if expected_value(game.u1, dev1) > v1 + tol or expected_value(game.u2, dev2) > v2 + tol:
            return False
    return True


def joint_optimum(joint_utility) -> tuple[tuple[int, int], float, list[tuple[int, int]]]:
    """Best cell (first in row-major order), its value, and every cell tied with it."""
    m = np.asarray(joint_utility, dtype=float)
    best = float(m.max())
    tied = [c for c in CELLS if m[c] == best]
    return tied[0], best, tied


def decomposition_check(game: BimatrixGame, joint_utility, tol: float = 1e-12) -> bool:
    m = np.asarray(joint_utility, dtype=float)
    return bool(m.shape == (2, 2) and np.all(np.abs(game.u1 + game.u2 - m) <= tol))


@dataclass
class Equilibrium:
    kind: str  # "pure" or "mixed"
    profile: tuple[int, int] | MixedStrategyProfile
    utilities: tuple[float, float]
    joint_utility: float
    gap: float

    def label(self) -> str:
        if isinstance(self.profile, MixedStrategyProfile):
            return f"mixed p={self.profile.p:g} q={self.profile.q:g}"
        i, j = self.profile
        return f"({ACTION_NAMES[i]}, {ACTION_NAMES[j]})"


@dataclass
class EquilibriumReport:
    pure_ne: list[tuple[int, int]]
    mixed_ne: MixedStrategyProfile | None
    joint_optimum: tuple[tuple[int, int], float]
    optimum_ties: list[tuple[int, int]]
    equilibria: list[Equilibrium] = field(default_factory=list)
    mixed_degenerate: bool = False

    @property
    def gaps(self) -> list[float]:
        return [e.gap for e in self.equilibria]

    def to_record(self) -> dict:
        cell, value = self.joint_optimum
        return {
            "joint_optimum": {"cell": [ACTION_NAMES[k] for k in cell], "value": value,
                              "ties": [[ACTION_NAMES[k] for k in c] for c in self.optimum_ties]},
            "mixed_degenerate": self.mixed_degenerate,
            "equilibria": [
                {
                    "kind": e.kind,
                    "profile": ([ACTION_NAMES[k] for k in e.profile] if e.kind == "pure"
                                else {"p": e.profile.p, "q": e.profile.q}),
                    "utilities": list(e.utilities),
                    "joint_utility": e.joint_utility,
                    "gap": e.gap,
                }
                for e in self.equilibria
            ],
        }

    def format_table(self) -> str:
        cell, value = self.joint_optimum
        rows = [("equilibrium", "U1", "U2", "joint", "gap")]
        for e in self.equilibria:
            rows.append((e.label(), f"{e.utilities[0]:g}", f"{e.utilities[1]:g}",
                         f"{e.joint_utility:g}", f"{e.gap:g}"))
        widths = [max(len(r[c]) for r in rows) for c in range(5)]
        lines = ["  ".join(v.ljust(w) if c == 0 else v.rjust(w)
                           for c, (v, w) in enumerate(zip(r, widths))) for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        opt = f"({ACTION_NAMES[cell[0]]}, {ACTION_NAMES[cell[1]]})"
        lines.append(f"joint optimum {opt} = {value:g}")
        if self.mixed_degenerate:
            lines.append("mixed equilibrium: indifference equations are degenerate")
        elif self.mixed_ne is None:
            lines.append("mixed equilibrium: none in the interior")
        return "\n".join(lines)


def suboptimality_report(game: BimatrixGame, joint_utility) -> EquilibriumReport:
    """Equilibria of ``game`` scored against the joint optimum of ``joint_utility``."""
    if not decomposition_check(game, joint_utility):
        raise ContractError("decomposition_check failed: U1 + U2 does not equal the joint utility")
    joint = np.asarray(joint_utility, dtype=float)
    cell, best, ties = joint_optimum(joint)
    pure = enumerate_pure_ne(game)
    p, q = indifference_solution(game)
    mixed = mixed_ne_2x2(game)
    report = EquilibriumReport(pure, mixed, (cell, best), ties,
                               mixed_degenerate=p is None or q is None)
    for c in pure:
        value = float(joint[c])
        report.equilibria.append(Equilibrium("pure", c, game.utilities(c), value, best - value))
    if mixed is not None:
        utils = (expected_value(game.u1, mixed), expected_value(game.u2, mixed))
        value = expected_value(joint, mixed)
        report.equilibria.append(Equilibrium("mixed", mixed, utils, value, best - value))
    for e in report.equilibria:
        if not verify_ne(game, e.profile):
            raise AssertionError(f"reported equilibrium {e.label()} fails verification")
    return report
