"""Suite runner, SR/CR metrics, transcripts and replay."""

from __future__ import annotations

import json
import logging
import random
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from .backend import Backend, ScriptedBackend
from .memory import Memory
from .planner import EpisodeResult, PlannerConfig, StepRecord, run_episode
from .simenv import FaultProfile, NO_FAULTS, Scene, SimEnv, jitter_scene
from .skills import SkillRegistry, default_registry
from .tasks import CATEGORIES, LENGTH_CLASSES, TaskSpec

log = logging.getLogger(__name__)

BackendFactory = Callable[[TaskSpec], Backend]


# ---------------------------------------------------------------- metrics


def chain_progress(episode: EpisodeResult, task: TaskSpec, registry: SkillRegistry | None = None) -> int:
    """Length of the expected-chain prefix completed before the first failure.

    Failed perceptions and repeated successful perceptions (re-detection) are
    recovery, not progress: they neither advance nor stop the count. A failed
    action or a call that diverges from the chain stops it.
    """
    registry = registry or default_registry()
    expected = task.expected_chain
    k = 0
    for step in episode.steps:
        if step.outcome is None or step.turn is None:
            continue
        skill = step.turn.call.skill
        kind = registry.kind_of(skill)
        if kind == "terminal":
            continue
        if not step.outcome.ok:
            if kind == "perception":
                continue
            break
        if k < len(expected) and skill == expected[k]:
            k += 1
        elif kind == "perception" and k > 0 and expected[k - 1] == skill:
            continue
        else:
            break
    return k


def task_succeeded(episode: EpisodeResult, task: TaskSpec, registry: SkillRegistry | None = None) -> bool:
    return episode.success and chain_progress(episode, task, registry) == len(task.expected_chain)


def compute_cr(episode: EpisodeResult, task: TaskSpec, registry: SkillRegistry | None = None) -> float:
    if task_succeeded(episode, task, registry):
        return 1.0
    return chain_progress(episode, task, registry) / len(task.expected_chain)


def compute_sr(episodes: Iterable[Any]) -> float:
    """Percent of successful episodes, one decimal. Accepts bools or objects with ``success``."""
    flags = [e if isinstance(e, bool) else bool(e.success) for e in episodes]
    if not flags:
        raise ValueError("cannot compute SR over zero episodes")
    return round(100.0 * sum(flags) / len(flags), 1)


@dataclass
class Cell:
    episodes: int = 0
    successes: int = 0
    cr_sum: float = 0.0

    @property
    def sr(self) -> float:
        return round(100.0 * self.successes / self.episodes, 1) if self.episodes else 0.0

    @property
    def cr(self) -> float:
        return round(100.0 * self.cr_sum / self.episodes, 1) if self.episodes else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {"episodes": self.episodes, "sr": self.sr, "cr": self.cr}


@dataclass
class MetricsReport:
    cells: dict[tuple[str, str], Cell]
    total: Cell
    fingerprint: dict[str, Any]

    @classmethod
    def build(cls, rows: Sequence[EpisodeRow], fingerprint: Mapping[str, Any]) -> MetricsReport:
        cells = {(c, lc): Cell() for c in CATEGORIES for lc in LENGTH_CLASSES}
        total = Cell()
        for row in rows:
            for cell in (cells[(row.category, row.length_class)], total):
                cell.episodes += 1
                cell.successes += int(row.success)
                cell.cr_sum += row.cr
        return cls(cells, total, dict(fingerprint))

    def to_dict(self) -> dict[str, Any]:
        return {
            "fingerprint": self.fingerprint,
            "cells": {
                cat: {lc: self.cells[(cat, lc)].to_dict() for lc in LENGTH_CLASSES} for cat in CATEGORIES
            },
            "total": self.total.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        head = f"{'':<20}" + "".join(f"{lc.title() + '-term':>16}" for lc in LENGTH_CLASSES)
        sub = f"{'':<20}" + "".join(f"{'%SR':>8}{'%CR':>8}" for _ in LENGTH_CLASSES)
        lines = [head, sub]
        for cat in CATEGORIES:
            row = f"{cat:<20}"
            for lc in LENGTH_CLASSES:
                c = self.cells[(cat, lc)]
                row += f"{c.sr:>8.1f}{c.cr:>8.1f}" if c.episodes else f"{'-':>8}{'-':>8}"
            lines.append(row)
        lines.append(
            f"total: {self.total.episodes} episodes, SR {self.total.sr:.1f}%, CR {self.total.cr:.1f}%"
        )
        fp = ", ".join(f"{k}={v}" for k, v in sorted(self.fingerprint.items()))
        lines.append(f"config: {fp}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- transcripts


def _jsonable(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, list):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    return value


def step_to_dict(step: StepRecord) -> dict[str, Any]:
    from .wire import render_call

    return {
        "index": step.index,
        "prompt": step.prompt,
        "outputs": list(step.outputs),
        "rejections": list(step.rejections),
        "verdicts": [{"level": v.level, "pass": v.passed, "reason": v.reason} for v in step.verdicts],
        "call": render_call(step.turn.call) if step.turn is not None else None,
        "retries_used": step.retries_used,
        "outcome": None
        if step.outcome is None
        else {
            "status": step.outcome.status,
            "result": _jsonable(step.outcome.result),
            "feedback": step.outcome.feedback,
        },
    }


def episode_to_transcript(
    task: TaskSpec,
    scene: Scene,
    faults: FaultProfile,
    config: PlannerConfig,
    backend_name: str,
    result: EpisodeResult,
    *,
    repeat: int = 0,
    episode_seed: int = 0,
    registry: SkillRegistry | None = None,
) -> dict[str, Any]:
    return {
        "task": task.to_dict(),
        "repeat": repeat,
        "episode_seed": episode_seed,
        "scene": scene.to_dict(),
        "faults": faults.to_dict(),
        "planner": config.to_dict(),
        "backend": backend_name,
        "success": task_succeeded(result, task, registry),
        "termination": result.termination,
        "error": result.error,
        "cr": compute_cr(result, task, registry),
        "steps": [step_to_dict(s) for s in result.steps],
    }


def replay_transcript(
    transcript: Mapping[str, Any], registry: SkillRegistry | None = None
) -> tuple[EpisodeResult, list[str]]:
    """Re-run an episode from its transcript with a scripted backend.

    Returns the new result and a list of mismatches against the recorded steps
    (empty when the replay is exact).
    """
    registry = registry or default_registry()
    task = TaskSpec.from_dict(transcript["task"])
    scene = Scene.from_dict(transcript["scene"])
    faults = FaultProfile(**transcript["faults"])
    config = PlannerConfig.from_dict(transcript["planner"])
    script = [o for s in transcript["steps"] for o in s["outputs"]]
    result = run_episode(task, SimEnv(scene, faults), registry, ScriptedBackend(script), Memory(), config)
    replayed = [step_to_dict(s) for s in result.steps]
    mismatches = []
    if result.termination != transcript["termination"]:
        mismatches.append(f"termination {result.termination} != {transcript['termination']}")
    if len(replayed) != len(transcript["steps"]):
        mismatches.append(f"{len(replayed)} steps != {len(transcript['steps'])}")
    for old, new in zip(transcript["steps"], replayed):
        for key in ("verdicts", "call", "outcome", "rejections"):
            if old[key] != new[key]:
                mismatches.append(f"step {old['index']}: {key} differs")
    return result, mismatches


# ---------------------------------------------------------------- suite


@dataclass
class EpisodeRow:
    task_id: str
    repeat: int
    category: str
    length_class: str
    success: bool
    cr: float
    termination: str


@dataclass
class SuiteResult:
    report: MetricsReport
    rows: list[EpisodeRow]
    transcripts: list[dict[str, Any]] = field(default_factory=list)


def episode_seed(seed: int, task_id: str, repeat: int) -> int:
    return zlib.crc32(f"{seed}:{task_id}:{repeat}".encode())


def default_config(task: TaskSpec) -> PlannerConfig:
    """Step budget 2*chain+4 and three retries per step."""
    return PlannerConfig(max_steps=2 * task.chain_length + 4, max_retries_per_step=3)


def run_task(
    task: TaskSpec,
    backend: Backend,
    *,
    faults: FaultProfile = NO_FAULTS,
    config: PlannerConfig | None = None,
    registry: SkillRegistry | None = None,
    scene: Scene | None = None,
    memory: Memory | None = None,
) -> tuple[EpisodeResult, Scene]:
    """One episode on a fresh copy of the (optionally jittered) scene."""
    registry = registry or default_registry()
    config = config or default_config(task)
    initial = (scene or task.scene).copy()
    env = SimEnv(initial.copy(), faults)
    return run_episode(task, env, registry, backend, memory or Memory(), config), initial


def run_suite(
    suite: Sequence[TaskSpec],
    backend_factory: BackendFactory,
    fault_profile: FaultProfile = NO_FAULTS,
    repeats: int = 1,
    config: PlannerConfig | None = None,
    *,
    seed: int = 0,
    registry: SkillRegistry | None = None,
    jitter: bool = True,
    workers: int = 1,
    transcript_dir: str | Path | None = None,
    keep_transcripts: bool = True,
) -> SuiteResult:
    """Run ``repeats`` x ``len(suite)`` episodes and aggregate SR/CR.

    Each repeat jitters the scene and reseeds faults from (seed, task, repeat).
    Per-episode errors count as failures and never abort the suite.
    """
    if not suite:
        raise ValueError("suite is empty")
    registry = registry or default_registry()
    jobs = [(r, t) for r in range(repeats) for t in suite]

    def one(job: tuple[int, TaskSpec]) -> tuple[EpisodeRow, dict[str, Any] | None]:
        repeat, task = job
        ep_seed = episode_seed(seed, task.id, repeat)
        scene = jitter_scene(task.scene, random.Random(ep_seed)) if jitter else task.scene.copy()
        faults = FaultProfile(fault_profile.p_detect_empty, fault_profile.p_action_fail, ep_seed)
        cfg = config or default_config(task)
        backend = backend_factory(task)
        try:
            result, initial = run_task(task, backend, faults=faults, config=cfg, registry=registry, scene=scene)
        except Exception as e:  # noqa: BLE001 - an episode crash is a failed episode
            log.exception("episode %s/%d crashed", task.id, repeat)
            result, initial = EpisodeResult(False, [], "backend_error", f"{type(e).__name__}: {e}"), scene
        row = EpisodeRow(
            task.id,
            repeat,
            task.category,
            task.length_class,
            task_succeeded(result, task, registry),
            compute_cr(result, task, registry),
            result.termination,
        )
        transcript = None
        if keep_transcripts or transcript_dir:
            transcript = episode_to_transcript(
                task, initial, faults, cfg, getattr(backend, "name", type(backend).__name__), result,
                repeat=repeat, episode_seed=ep_seed, registry=registry,
            )
            if transcript_dir:
                path = Path(transcript_dir) / f"{task.id}__r{repeat}.json"
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(json.dumps(transcript, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        return row, transcript

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(one, jobs))
    else:
        outputs = [one(j) for j in jobs]

    rows = [o[0] for o in outputs]
    fingerprint = {
        "backend": getattr(backend_factory(suite[0]), "name", "custom"),
        "p_detect_empty": fault_profile.p_detect_empty,
        "p_action_fail": fault_profile.p_action_fail,
        "seed": seed,
        "repeats": repeats,
        "tasks": len(suite),
    }
    report = MetricsReport.build(rows, fingerprint)
    transcripts = [o[1] for o in outputs if o[1] is not None] if keep_transcripts else []
    return SuiteResult(report, rows, transcripts)


def with_max_steps(config: PlannerConfig, max_steps: int) -> PlannerConfig:
    return replace(config, max_steps=max_steps)
