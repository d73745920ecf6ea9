"""Benchmark task specs and their length classes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

from .backend import GoalProgram
from .simenv import Scene, SceneError

CATEGORIES = ("simple_mapping", "dynamic_reasoning")
LENGTH_CLASSES = ("short", "medium", "long")


class TaskError(ValueError):
    pass


def categorize(task_or_length: Any) -> str:
    """Length class of a task (or a chain length): 2-4 short, 5-6 medium, 7-8 long."""
    n = task_or_length if isinstance(task_or_length, int) else len(task_or_length.expected_chain)
    if 2 <= n <= 4:
        return "short"
    if 5 <= n <= 6:
        return "medium"
    if 7 <= n <= 8:
        return "long"
    raise TaskError(f"chain length {n} is outside the evaluation range 2-8")


@dataclass
class TaskSpec:
    id: str
    instruction: str
    goal_program: GoalProgram
    scene: Scene
    expected_chain: list[str]
    category: str
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.expected_chain:
            raise TaskError(f"{self.id}: expected_chain is empty")
        if self.category not in CATEGORIES:
            raise TaskError(f"{self.id}: unknown category {self.category!r}")

    @property
    def length_class(self) -> str:
        return categorize(len(self.expected_chain))

    @property
    def chain_length(self) -> int:
        return len(self.expected_chain)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TaskSpec:
        tid = data.get("id", "<no id>")
        try:
            goal = GoalProgram.from_list(data["goal_program"])
            scene = Scene.from_dict(data["scene"])
            chain = list(data.get("expected_chain") or goal.expected_chain())
            task = cls(
                id=str(data["id"]),
                instruction=str(data.get("instruction") or goal.instruction()),
                goal_program=goal,
                scene=scene,
                expected_chain=chain,
                category=str(data["category"]),
                meta=dict(data.get("meta") or {}),
            )
        except (KeyError, TypeError, ValueError, SceneError) as e:
            if isinstance(e, TaskError):
                raise
            raise TaskError(f"task {tid}: {e}") from e
        if chain != goal.expected_chain():
            raise TaskError(f"task {tid}: expected_chain disagrees with the goal program")
        return task

    def to_dict(self) -> dict[str, Any]:
        out = {
            "id": self.id,
            "category": self.category,
            "instruction": self.instruction,
            "goal_program": self.goal_program.to_list(),
            "expected_chain": list(self.expected_chain),
            "scene": self.scene.to_dict(),
        }
        if self.meta:
            out["meta"] = dict(self.meta)
        return out


def load_tasks(source: str | Path | Sequence[Mapping[str, Any]]) -> list[TaskSpec]:
    if isinstance(source, (str, Path)):
        data = json.loads(Path(source).read_text(encoding="utf-8"))
    else:
        data = source
    items = data["tasks"] if isinstance(data, Mapping) else data
    tasks = [TaskSpec.from_dict(t) for t in items]
    ids = [t.id for t in tasks]
    if len(set(ids)) != len(ids):
        raise TaskError("duplicate task ids")
    return tasks


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("skillplan") / "data" / name))


def load_suite(path: str | Path | None = None) -> list[TaskSpec]:
    """Load an evaluation suite (default: the bundled 30-task suite)."""
    tasks = load_tasks(path or bundled_path("eval_suite.json"))
    for t in tasks:
        categorize(t)
    return tasks
