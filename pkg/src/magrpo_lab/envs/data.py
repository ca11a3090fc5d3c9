"""Task datasets and response catalogs for the cooperative assembly task.

File format: JSON lines, one record per line. ``#`` lines and blank lines are
ignored. Three record kinds::

    {"kind": "task", "id": 0, "target": 9, "prompt": ["TASK", "F0"]}
    {"kind": "aux",  "entry": "AUX = 2+1"}
    {"kind": "main", "entry": "MAIN = AUX*2"}

Catalog order is file order. Several tasks may share a prompt, in which case
the agents cannot tell their targets apart from the prompt alone.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ..core import ResponseAction, TaskSpec
from .assembly import LadderWeights, ladder_evaluate, split_line
from .expr import ParseError, parse

DEFAULT_AUX_CATALOG = (
    "AUX = 1",
    "AUX = 2",
    "AUX = 3",
    "AUX = 2+2",
    "AUX = 2*3",
    "AUX = 1+4",
    "AUX = 7",
    "AUX = 2*4",
    "AUX = 3+*1",
    "AUX = 2+",
    "AUX 3",
    "AUX =",
)

DEFAULT_MAIN_CATALOG = (
    "MAIN = AUX*2",
    "MAIN = AUX+1",
    "MAIN = AUX+AUX*2",
    "MAIN = AUX",
    "MAIN = AUX*AUX",
    "MAIN = AUX+4",
    "MAIN = 3*2",
    "MAIN = 5+5",
    "MAIN = AUX*",
    "MAIN = *2",
    "MAIN AUX",
    "MAIN = 12",
)

# Two hidden targets per prompt family; each target is fully solvable by 2-4 pairs.
DEFAULT_FAMILIES = ((2, 9), (3, 8), (4, 10), (1, 12), (5, 16), (3, 7), (4, 8), (5, 10))


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class AssemblyData:
    tasks: tuple[TaskSpec, ...]
    aux_catalog: tuple[str, ...]
    main_catalog: tuple[str, ...]


def default_dataset() -> AssemblyData:
    tasks = []
    for fam, targets in enumerate(DEFAULT_FAMILIES):
        for target in targets:
            tasks.append(TaskSpec(len(tasks), target, ("TASK", f"F{fam}")))
    data = AssemblyData(tuple(tasks), DEFAULT_AUX_CATALOG, DEFAULT_MAIN_CATALOG)
    validate_dataset(data)
    return data


def solving_pairs(data: AssemblyData, task: TaskSpec,
                  weights: LadderWeights = LadderWeights()) -> list[tuple[int, int]]:
    """(aux, main) index pairs that collect the full ladder on ``task``."""
    pairs = []
    for i, a in enumerate(data.aux_catalog):
        for j, m in enumerate(data.main_catalog):
            b = ladder_evaluate(ResponseAction(i, a), ResponseAction(j, m), task, weights)
            if b.tag == "ALL_PASS":
                pairs.append((i, j))
    return pairs


def _parses(entry: str, name: str) -> bool:
    body = split_line(entry, name)
    if body is None:
        return False
    try:
        parse(body)
    except ParseError:
        return False
    return True


def validate_dataset(data: AssemblyData) -> None:
    problems = []
    if not data.tasks:
        problems.append("dataset has no tasks")
    if len({t.task_id for t in data.tasks}) != len(data.tasks):
        problems.append("task ids are not unique")
    for name, cat in (("AUX", data.aux_catalog), ("MAIN", data.main_catalog)):
        if not cat:
            problems.append(f"{name} catalog is empty")
        elif all(_parses(e, name) for e in cat):
            problems.append(f"{name} catalog has no syntactically invalid entry")
    if not any(_parses(e, "MAIN") and "AUX" not in split_line(e, "MAIN")
               for e in data.main_catalog):
        problems.append("MAIN catalog has no entry that ignores AUX")
    for task in data.tasks:
        if not solving_pairs(data, task):
            problems.append(f"task {task.task_id} target {task.target_value} is unreachable")
    if problems:
        raise DatasetError("; ".join(problems))


def load_dataset(path: str | Path) -> AssemblyData:
    tasks, aux, main = [], [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rec = json.loads(line)
            kind = rec["kind"]
            if kind == "task":
                tasks.append(TaskSpec(int(rec["id"]), int(rec["target"]),
                                      tuple(str(t) for t in rec["prompt"])))
            elif kind in ("aux", "main"):
                (aux if kind == "aux" else main).append(str(rec["entry"]))
            else:
                raise DatasetError(f"unknown record kind {kind!r}")
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
    data = AssemblyData(tuple(tasks), tuple(aux), tuple(main))
    validate_dataset(data)
    return data


def save_dataset(data: AssemblyData, path: str | Path) -> None:
    lines = ["# magrpo-lab assembly dataset v1"]
    for t in data.tasks:
        lines.append(json.dumps({"kind": "task", "id": t.task_id, "target": t.target_value,
                                 "prompt": list(t.prompt_fragment)}))
    lines += [json.dumps({"kind": "aux", "entry": e}) for e in data.aux_catalog]
    lines += [json.dumps({"kind": "main", "entry": e}) for e in data.main_catalog]
    Path(path).write_text("\n".join(lines) + "\n")
