"""Plan-verify-act loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

from .backend import Backend, BackendRequest
from .geometry import qualifier_failure, qualifier_for_call
from .memory import Memory, MemoryEntry
from .skills import (
    Executor,
    SkillOutcome,
    SkillRegistry,
    UnknownSkillError,
    default_registry,
    invoke,
    is_bbox,
    validate_call_schema,
)
from .wire import ModelTurn, ParseError, assemble_prompt, parse_model_turn, render_call

log = logging.getLogger(__name__)

LEVELS = ("feedback", "goal", "params")
PERCEPTION_EXEMPT = ("moveHome",)  # actions allowed before any perception


@dataclass
class Verification:
    feedback: bool = True
    goal: bool = True
    params: bool = True

    def enabled(self) -> list[str]:
        return [lvl for lvl in LEVELS if getattr(self, lvl)]


@dataclass
class PlannerConfig:
    max_steps: int = 20
    max_retries_per_step: int = 2
    verification: Verification = field(default_factory=Verification)
    strict_bbox_membership: bool = True
    max_output_tokens: int = 512
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.max_retries_per_step < 0:
            raise ValueError("max_retries_per_step must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "max_steps": self.max_steps,
            "max_retries_per_step": self.max_retries_per_step,
            "verification": {lvl: getattr(self.verification, lvl) for lvl in LEVELS},
            "strict_bbox_membership": self.strict_bbox_membership,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> PlannerConfig:
        v = data.get("verification", {})
        return cls(
            max_steps=int(data.get("max_steps", 20)),
            max_retries_per_step=int(data.get("max_retries_per_step", 2)),
            verification=Verification(**{lvl: bool(v.get(lvl, True)) for lvl in LEVELS}),
            strict_bbox_membership=bool(data.get("strict_bbox_membership", True)),
        )


@dataclass(frozen=True)
class Verdict:
    level: str
    passed: bool
    reason: str = ""

    def __post_init__(self) -> None:
        if not self.passed and not self.reason:
            raise ValueError("a failing verdict needs a reason")


@dataclass
class StepRecord:
    index: int
    prompt: str = ""
    turn: ModelTurn | None = None
    verdicts: list[Verdict] = field(default_factory=list)
    outcome: SkillOutcome | None = None
    retries_used: int = 0
    outputs: list[str] = field(default_factory=list)
    rejections: list[str] = field(default_factory=list)


@dataclass
class EpisodeResult:
    success: bool
    steps: list[StepRecord]
    termination: str
    error: str | None = None

    @property
    def executed(self) -> list[StepRecord]:
        return [s for s in self.steps if s.outcome is not None]

    @property
    def backend_calls(self) -> int:
        return sum(len(s.outputs) for s in self.steps)


# ---------------------------------------------------------------- verification levels


def _perception_kind(skill: str, registry: SkillRegistry | None) -> bool:
    if registry is None:
        return skill == "2dDetect"
    return registry.kind_of(skill) == "perception"


def verify_feedback_level(
    last_entry: MemoryEntry | None, turn: ModelTurn, registry: SkillRegistry | None = None
) -> Verdict:
    if last_entry is None or last_entry.status == "success":
        return Verdict("feedback", True)
    if _perception_kind(turn.call.skill, registry):
        return Verdict("feedback", True, "re-calling perception after a failure")
    if render_call(turn.call) == last_entry.call_text:
        return Verdict("feedback", False, "repeats failed call unchanged")
    return Verdict("feedback", True)


def _entry_kinds(memory: Memory | None, registry: SkillRegistry) -> list[str]:
    if memory is None:
        return []
    return [registry.kind_of(e.skill) or "" for e in memory.entries if e.status == "success"]


def verify_goal_consistency(
    task: Any, turn: ModelTurn, registry: SkillRegistry, memory: Memory | None = None
) -> Verdict:
    """Mechanical phase checks; semantic alignment is left to the backend."""
    if not turn.trace.goal.strip():
        return Verdict("goal", False, "empty goal section")
    skill = turn.call.skill
    kind = registry.kind_of(skill)
    if kind is None:
        return Verdict("goal", False, f"unknown skill {skill!r}")
    done = _entry_kinds(memory, registry)
    if kind == "action" and skill not in PERCEPTION_EXEMPT and "perception" not in done:
        return Verdict("goal", False, "action before perception")
    if kind == "terminal" and "action" not in done:
        return Verdict("goal", False, "terminal before any action")
    return Verdict("goal", True)


def _prior_successes(memory: Memory | None, skill: str, target: str) -> int:
    if memory is None:
        return 0
    n = 0
    for e in memory.entries:
        if e.status == "success" and e.skill == skill:
            if e.call.args.get("target") == target:
                n += 1
    return n


def verify_parameters(
    turn: ModelTurn,
    last_perception: Sequence[Sequence[int]] | None,
    scene_bounds: tuple[int, int],
    *,
    registry: SkillRegistry | None = None,
    instruction: str = "",
    memory: Memory | None = None,
    strict_bbox_membership: bool = True,
) -> Verdict:
    """Schema, bounds, perception membership, then qualifier recomputation."""
    registry = registry or default_registry()
    call = turn.call
    perceived = (last_perception or ()) if strict_bbox_membership else None
    report = validate_call_schema(call, registry, bounds=scene_bounds, perceived=perceived)
    if not report.valid:
        return Verdict("params", False, report.summary())
    target = call.args.get("target")
    if instruction and last_perception and isinstance(target, str):
        prior = _prior_successes(memory, call.skill, target)
        qualifier = qualifier_for_call(instruction, call.skill, target, prior)
        if qualifier:
            for name, value in call.args.items():
                if is_bbox(value):
                    why = qualifier_failure(qualifier, value, last_perception)
                    if why:
                        return Verdict("params", False, f"{qualifier} {target}: {why}")
    return Verdict("params", True)


def verify_turn(
    task: Any,
    turn: ModelTurn,
    memory: Memory,
    registry: SkillRegistry,
    bounds: tuple[int, int],
    config: PlannerConfig,
) -> list[Verdict]:
    """Run enabled levels in order; stop at the first failure."""
    verdicts = []
    for level in config.verification.enabled():
        if level == "feedback":
            v = verify_feedback_level(memory.last, turn, registry)
        elif level == "goal":
            v = verify_goal_consistency(task, turn, registry, memory)
        else:
            kept = memory.latest_perception()
            v = verify_parameters(
                turn,
                kept.full_result if kept else None,
                bounds,
                registry=registry,
                instruction=task.instruction,
                memory=memory,
                strict_bbox_membership=config.strict_bbox_membership,
            )
        verdicts.append(v)
        if not v.passed:
            break
    return verdicts


# ---------------------------------------------------------------- loop


def run_episode(
    task: Any,
    env: Executor,
    registry: SkillRegistry,
    backend: Backend,
    memory: Memory | None = None,
    config: PlannerConfig | None = None,
) -> EpisodeResult:
    """Drive one episode until the terminal skill succeeds or a budget runs out.

    ``task`` needs an ``instruction``; ``env`` must expose ``bounds``.
    """
    memory = Memory() if memory is None else memory
    config = config or PlannerConfig()
    catalog = registry.render_catalog()
    bounds = env.bounds
    steps: list[StepRecord] = []

    while True:
        if len(steps) >= config.max_steps:
            return EpisodeResult(False, steps, "step_budget")
        prompt = assemble_prompt(task.instruction, catalog, memory.render_context())
        record = StepRecord(index=len(steps) + 1, prompt=prompt.user)
        notes: list[str] = []
        executed = False
        for attempt in range(config.max_retries_per_step + 1):
            user = prompt.user
            if notes:
                user += "\n## Rejected\n" + "\n".join(notes) + "\n"
            request = BackendRequest(
                user, prompt.system, config.max_output_tokens, config.temperature
            )
            try:
                text = backend.complete(request)
            except Exception as e:  # noqa: BLE001 - any backend fault ends the episode cleanly
                log.info("backend error at step %d: %s", record.index, e)
                steps.append(record)
                return EpisodeResult(False, steps, "backend_error", f"{type(e).__name__}: {e}")
            record.outputs.append(text)
            try:
                turn = parse_model_turn(text)
            except ParseError as e:
                reason = f"unparseable output ({e.code}): {e.detail}"
                record.rejections.append(reason)
                notes.append(f"attempt {attempt + 1}: {reason}")
                continue
            record.turn = turn
            record.verdicts = verify_turn(task, turn, memory, registry, bounds, config)
            failed = next((v for v in record.verdicts if not v.passed), None)
            if failed is not None:
                reason = f"{failed.level} level: {failed.reason}"
                record.rejections.append(reason)
                notes.append(f"attempt {attempt + 1} rejected at {reason}")
                continue
            record.retries_used = attempt
            try:
                record.outcome = invoke(turn.call, env, registry)
            except UnknownSkillError as e:
                record.outcome = SkillOutcome.failed(str(e))
            executed = True
            break
        if not executed:
            record.retries_used = config.max_retries_per_step
            steps.append(record)
            return EpisodeResult(False, steps, "retry_budget")
        steps.append(record)
        memory.append(record)
        if registry.kind_of(record.turn.call.skill) == "terminal" and record.outcome.ok:
            return EpisodeResult(True, steps, "terminal_skill")
