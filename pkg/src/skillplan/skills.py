"""Skill registry: typed skill specs, call validation, catalog rendering, dispatch."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Protocol, Sequence

from .geometry import BBox

log = logging.getLogger(__name__)

SKILL_KINDS = ("perception", "action", "terminal")
VALUE_KINDS = ("text", "number", "bbox", "bbox_list")

# Skill names may lead with digits ("2dDetect"); parameter names may not.
SKILL_NAME_RE = re.compile(r"[0-9]*[A-Za-z][A-Za-z0-9_]*\Z")
PARAM_NAME_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*\Z")

DETECTION_EMPTY = "Detection result is empty."


class SkillError(Exception):
    pass


class DuplicateSkillError(SkillError):
    pass


class MalformedSkillError(SkillError):
    pass


class UnknownSkillError(SkillError):
    pass


class RegistryError(SkillError):
    """Registry cannot be rendered (empty, or no terminal skill)."""


@dataclass(frozen=True)
class ParamSpec:
    name: str
    value_kind: str
    required: bool = True


@dataclass(frozen=True)
class SkillSpec:
    name: str
    kind: str
    params: tuple[ParamSpec, ...] = ()
    description: str = ""

    def param(self, name: str) -> ParamSpec | None:
        for p in self.params:
            if p.name == name:
                return p
        return None


@dataclass
class SkillOutcome:
    status: str
    result: Any = None
    feedback: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "success"

    @classmethod
    def failed(cls, feedback: str) -> SkillOutcome:
        return cls("failed", None, feedback)

    @classmethod
    def success(cls, result: Any = None) -> SkillOutcome:
        return cls("success", result, None)


@dataclass
class FunctionCall:
    skill: str
    args: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        # bbox-shaped lists become BBox tuples so calls compare equal after a wire round trip
        if isinstance(self.args, Mapping):
            self.args = {k: _normalize_value(v) for k, v in self.args.items()}


def _normalize_value(value: Any) -> Any:
    if is_bbox(value):
        return BBox(*value)
    if is_bbox_list(value):
        return tuple(BBox(*b) for b in value)
    return value


@dataclass(frozen=True)
class Violation:
    param: str
    code: str
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations

    def codes(self) -> set[tuple[str, str]]:
        return {(v.param, v.code) for v in self.violations}

    def summary(self) -> str:
        return "; ".join(f"{v.param}: {v.code} ({v.detail})" for v in self.violations)


class Executor(Protocol):
    def execute(self, call: FunctionCall) -> SkillOutcome: ...


def is_bbox(value: Any) -> bool:
    return (
        isinstance(value, (tuple, list))
        and len(value) == 4
        and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    )


def is_bbox_list(value: Any) -> bool:
    return isinstance(value, (tuple, list)) and len(value) > 0 and all(is_bbox(b) for b in value)


def _kind_ok(kind: str, value: Any) -> bool:
    if kind == "text":
        return isinstance(value, str)
    if kind == "number":
        return (
            isinstance(value, (int, float))
            and not isinstance(value, bool)
            and math.isfinite(value)
        )
    if kind == "bbox":
        return is_bbox(value)
    if kind == "bbox_list":
        return is_bbox_list(value)
    return False


def bbox_in_bounds(bbox: Sequence[int], width: int, height: int) -> bool:
    x0, y0, x1, y1 = bbox
    return 0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height


def check_outcome(spec: SkillSpec, outcome: SkillOutcome) -> str | None:
    """Return a description of the first invariant the outcome breaks, or None."""
    if outcome.status not in ("success", "failed"):
        return f"unknown status {outcome.status!r}"
    if outcome.status == "failed":
        if outcome.result is not None:
            return "failed outcome carries a result"
        if not outcome.feedback:
            return "failed outcome without feedback"
        return None
    if spec.kind == "perception":
        if not is_bbox_list(outcome.result):
            return "perception success without a bbox list"
    elif outcome.result is not None:
        return f"{spec.kind} skill returned a result"
    return None


class SkillRegistry:
    """Ordered collection of skill specs.

    Built once, then shared read-only between episodes.
    """

    def __init__(self, specs: Iterable[SkillSpec] = ()) -> None:
        self._skills: dict[str, SkillSpec] = {}
        for spec in specs:
            self.register(spec)

    def register(self, spec: SkillSpec) -> SkillRegistry:
        _check_spec(spec)
        if spec.name in self._skills:
            raise DuplicateSkillError(f"skill {spec.name!r} already registered")
        if spec.kind == "terminal" and self.terminal is not None:
            raise MalformedSkillError(
                f"terminal skill already registered ({self.terminal.name!r})"
            )
        self._skills[spec.name] = spec
        return self

    def __contains__(self, name: object) -> bool:
        return name in self._skills

    def __len__(self) -> int:
        return len(self._skills)

    def __iter__(self):
        return iter(self._skills.values())

    def get(self, name: str) -> SkillSpec:
        try:
            return self._skills[name]
        except KeyError:
            raise UnknownSkillError(f"unknown skill {name!r}") from None

    def kind_of(self, name: str) -> str | None:
        spec = self._skills.get(name)
        return spec.kind if spec else None

    @property
    def terminal(self) -> SkillSpec | None:
        for spec in self._skills.values():
            if spec.kind == "terminal":
                return spec
        return None

    def render_catalog(self) -> str:
        if not self._skills:
            raise RegistryError("skill registry is empty")
        if self.terminal is None:
            raise RegistryError("skill registry has no terminal skill")
        lines = []
        for spec in self._skills.values():
            params = ", ".join(
                f"{p.name}: {p.value_kind}{'' if p.required else '?'}" for p in spec.params
            )
            lines.append(f"- {spec.name}({params}) [{spec.kind}]: {spec.description}")
        return "\n".join(lines)

    def validate(
        self,
        call: FunctionCall,
        *,
        bounds: tuple[int, int] | None = None,
        perceived: Sequence[Sequence[int]] | None = None,
    ) -> ValidationReport:
        return validate_call_schema(call, self, bounds=bounds, perceived=perceived)

    def invoke(self, call: FunctionCall, executor: Executor) -> SkillOutcome:
        return invoke(call, executor, self)


def _check_spec(spec: SkillSpec) -> None:
    if not isinstance(spec.name, str) or not SKILL_NAME_RE.match(spec.name):
        raise MalformedSkillError(f"bad skill name {spec.name!r}")
    if spec.kind not in SKILL_KINDS:
        raise MalformedSkillError(f"{spec.name}: bad kind {spec.kind!r}")
    seen = set()
    for p in spec.params:
        if not PARAM_NAME_RE.match(p.name):
            raise MalformedSkillError(f"{spec.name}: bad param name {p.name!r}")
        if p.value_kind not in VALUE_KINDS:
            raise MalformedSkillError(f"{spec.name}.{p.name}: bad value kind {p.value_kind!r}")
        if p.name in seen:
            raise MalformedSkillError(f"{spec.name}: duplicate param {p.name!r}")
        seen.add(p.name)


def register_skill(registry: SkillRegistry, spec: SkillSpec) -> SkillRegistry:
    return registry.register(spec)


def render_skill_catalog(registry: SkillRegistry) -> str:
    return registry.render_catalog()


def validate_call_schema(
    call: Any,
    registry: SkillRegistry,
    *,
    bounds: tuple[int, int] | None = None,
    perceived: Sequence[Sequence[int]] | None = None,
) -> ValidationReport:
    """Check a call against its skill's parameter schema.

    Never raises. ``bounds`` (width, height) enables ``bbox_out_of_bounds``;
    ``perceived`` enables ``bbox_not_perceived`` membership checks.
    """
    report = ValidationReport()
    add = report.violations.append
    skill = getattr(call, "skill", None)
    args = getattr(call, "args", None)
    if not isinstance(skill, str) or skill not in registry:
        add(Violation("<skill>", "unknown_param", f"unknown skill {skill!r}"))
        return report
    spec = registry.get(skill)
    if not isinstance(args, Mapping):
        add(Violation("<args>", "wrong_kind", "arguments are not a mapping"))
        return report

    for p in spec.params:
        if p.required and p.name not in args:
            add(Violation(p.name, "missing_required", f"{skill} requires {p.name}"))
    perceived_set = None
    if perceived is not None:
        perceived_set = {tuple(b) for b in perceived if is_bbox(b)}
    for name, value in args.items():
        p = spec.param(name) if isinstance(name, str) else None
        if p is None:
            add(Violation(str(name), "unknown_param", f"{skill} has no parameter {name!r}"))
            continue
        if not _kind_ok(p.value_kind, value):
            add(Violation(name, "wrong_kind", f"expected {p.value_kind}, got {type(value).__name__}"))
            continue
        boxes = [value] if p.value_kind == "bbox" else (value if p.value_kind == "bbox_list" else [])
        for box in boxes:
            if bounds is not None and not bbox_in_bounds(box, *bounds):
                add(Violation(name, "bbox_out_of_bounds", f"{_fmt_box(box)} outside {bounds[0]}x{bounds[1]}"))
            elif perceived_set is not None and tuple(box) not in perceived_set:
                add(Violation(name, "bbox_not_perceived", f"{_fmt_box(box)} is not in the latest perception result"))
    return report


def _fmt_box(box: Sequence[int]) -> str:
    return "[" + ",".join(str(v) for v in box) + "]"


def invoke(call: FunctionCall, executor: Executor, registry: SkillRegistry) -> SkillOutcome:
    """Dispatch ``call`` to ``executor``.

    Executor exceptions and malformed outcomes come back as failed outcomes;
    only an unregistered skill raises.
    """
    spec = registry.get(call.skill)
    try:
        outcome = executor.execute(call)
    except Exception as e:  # noqa: BLE001 - every executor fault becomes feedback
        log.debug("executor raised during %s: %r", call.skill, e)
        return SkillOutcome.failed(str(e) or type(e).__name__)
    if not isinstance(outcome, SkillOutcome):
        return SkillOutcome.failed(f"executor returned {type(outcome).__name__}, not an outcome")
    problem = check_outcome(spec, outcome)
    if problem is not None:
        return SkillOutcome.failed(f"invalid outcome from executor: {problem}")
    return outcome


def default_registry() -> SkillRegistry:
    """The eight-skill tabletop library used by the simulator and the suites."""
    target = ParamSpec("target", "text")
    bbox = ParamSpec("bbox", "bbox")
    return SkillRegistry(
        [
            SkillSpec(
                "2dDetect",
                "perception",
                (target,),
                "Detect every visible object labeled `target`; returns their bounding boxes.",
            ),
            SkillSpec(
                "pick",
                "action",
                (target, bbox),
                "Grasp the `target` object located at `bbox` (a perceived bounding box).",
            ),
            SkillSpec(
                "place",
                "action",
                (target, bbox),
                "Place the held object onto the `target` object located at `bbox`.",
            ),
            SkillSpec(
                "push",
                "action",
                (target, bbox),
                "Push the `target` object located at `bbox` to the right. Gripper must be empty.",
            ),
            SkillSpec("moveHome", "action", (), "Move the arm back to its home pose."),
            SkillSpec("openGripper", "action", (), "Open the gripper, releasing any held object."),
            SkillSpec("closeGripper", "action", (), "Close the gripper."),
            SkillSpec("taskDone", "terminal", (), "Declare the task complete. Call once, last."),
        ]
    )


def registry_from_config(entries: Sequence[Mapping[str, Any]]) -> SkillRegistry:
    """Build a registry from declarative entries ``{name, kind, description, params}``."""
    reg = SkillRegistry()
    for i, entry in enumerate(entries):
        try:
            params = tuple(
                ParamSpec(p["name"], p["kind"], bool(p.get("required", True)))
                for p in entry.get("params", [])
            )
            spec = SkillSpec(entry["name"], entry["kind"], params, entry.get("description", ""))
        except (KeyError, TypeError) as e:
            raise MalformedSkillError(f"skills[{i}]: {e}") from e
        reg.register(spec)
    return reg
