"""Deterministic tabletop simulator implementing the default skill library."""

from __future__ import annotations

import copy
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, NamedTuple, Sequence

from .geometry import BBox, iou
from .skills import DETECTION_EMPTY, FunctionCall, SkillOutcome

DEFAULT_TABLE_DEPTH_MM = 400.0
DEFAULT_EVALUATOR_TEXT = "grasp failed: object not secured"
PUSH_DISTANCE_PX = 20


class SceneError(ValueError):
    pass


class Position3D(NamedTuple):
    x: float
    y: float
    z: float


@dataclass
class SceneObject:
    id: str
    label: str
    bbox: BBox
    depth_mm: float
    held: bool = False


@dataclass
class Scene:
    image_width: int
    image_height: int
    objects: list[SceneObject] = field(default_factory=list)
    holding: str | None = None
    table_depth_mm: float = DEFAULT_TABLE_DEPTH_MM

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.image_width <= 0 or self.image_height <= 0:
            raise SceneError("image dimensions must be positive")
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise SceneError("object ids must be unique")
        for o in self.objects:
            if not o.bbox.within(self.image_width, self.image_height):
                raise SceneError(f"object {o.id}: bbox {o.bbox} outside image")
            if not o.depth_mm > 0:
                raise SceneError(f"object {o.id}: depth must be positive")
        held = [o.id for o in self.objects if o.held]
        if len(held) > 1:
            raise SceneError("at most one object may be held")
        if (held[0] if held else None) != self.holding:
            raise SceneError("gripper state disagrees with held flags")

    def get(self, obj_id: str) -> SceneObject:
        for o in self.objects:
            if o.id == obj_id:
                return o
        raise KeyError(obj_id)

    @property
    def bounds(self) -> tuple[int, int]:
        return self.image_width, self.image_height

    def visible(self) -> list[SceneObject]:
        return [o for o in self.objects if not o.held]

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Scene:
        try:
            objects = [
                SceneObject(
                    id=str(o.get("id", f"obj{i}")),
                    label=str(o["label"]),
                    bbox=BBox(*(int(v) for v in o["bbox"])),
                    depth_mm=float(o["depth_mm"]),
                    held=bool(o.get("held", False)),
                )
                for i, o in enumerate(data["objects"])
            ]
            return cls(
                image_width=int(data["image_width"]),
                image_height=int(data["image_height"]),
                objects=objects,
                holding=data.get("holding"),
                table_depth_mm=float(data.get("table_depth_mm", DEFAULT_TABLE_DEPTH_MM)),
            )
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, SceneError):
                raise
            raise SceneError(f"malformed scene: {e}") from e

    def to_dict(self) -> dict[str, Any]:
        return {
            "image_width": self.image_width,
            "image_height": self.image_height,
            "table_depth_mm": self.table_depth_mm,
            "holding": self.holding,
            "objects": [
                {
                    "id": o.id,
                    "label": o.label,
                    "bbox": list(o.bbox),
                    "depth_mm": o.depth_mm,
                    "held": o.held,
                }
                for o in self.objects
            ],
        }

    def copy(self) -> Scene:
        return copy.deepcopy(self)


@dataclass(frozen=True)
class FaultProfile:
    p_detect_empty: float = 0.0
    p_action_fail: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("p_detect_empty", "p_action_fail"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> FaultProfile:
        """Parse ``"p_detect,p_action"`` (either part may be omitted)."""
        parts = [p.strip() for p in text.split(",")] if text else []
        values = [float(p) if p else 0.0 for p in parts] + [0.0, 0.0]
        return cls(values[0], values[1], seed)

    def to_dict(self) -> dict[str, Any]:
        return {"p_detect_empty": self.p_detect_empty, "p_action_fail": self.p_action_fail, "seed": self.seed}


NO_FAULTS = FaultProfile()

Evaluator = Callable[[], str]


def default_evaluator() -> str:
    return DEFAULT_EVALUATOR_TEXT


class SimEnv:
    """One episode's world: a scene, a seeded fault stream, and the skill implementations.

    Fault draws happen once per perception call and once per arm motion, in
    call order, so a fixed seed replays the same fault sequence.
    """

    def __init__(
        self,
        scene: Scene,
        faults: FaultProfile = NO_FAULTS,
        evaluator: Evaluator = default_evaluator,
    ) -> None:
        self.scene = scene
        self.faults = faults
        self.evaluator = evaluator
        self._rng = random.Random(faults.seed)
        self._handlers: dict[str, Callable[..., SkillOutcome]] = {
            "2dDetect": self.detect_2d,
            "pick": self.pick,
            "place": self.place,
            "push": self.push,
            "moveHome": self.move_home,
            "openGripper": self.open_gripper,
            "closeGripper": self.close_gripper,
            "taskDone": self.task_done,
        }

    @property
    def bounds(self) -> tuple[int, int]:
        return self.scene.bounds

    def execute(self, call: FunctionCall) -> SkillOutcome:
        handler = self._handlers.get(call.skill)
        if handler is None:
            raise NotImplementedError(f"simulator does not implement {call.skill!r}")
        return handler(**call.args)

    # perception

    def detect_2d(self, target: str) -> SkillOutcome:
        if not target:
            raise ValueError("detection target must be nonempty")
        faulted = self._rng.random() < self.faults.p_detect_empty
        boxes = sorted(
            (o.bbox for o in self.scene.visible() if o.label == target),
            key=lambda b: (b.x_min, b.y_min),
        )
        if faulted or not boxes:
            return SkillOutcome.failed(DETECTION_EMPTY)
        return SkillOutcome.success(boxes)

    # geometry and motion

    def _check_bbox(self, bbox: Sequence[int]) -> BBox:
        box = BBox(*bbox)
        if not box.within(*self.bounds):
            raise ValueError(f"bbox {box} is outside the {self.bounds[0]}x{self.bounds[1]} image")
        return box

    def _best_match(self, bbox: BBox) -> SceneObject | None:
        best, best_score = None, 0.0
        for o in self.scene.visible():
            score = iou(o.bbox, bbox)
            if score > best_score:
                best, best_score = o, score
        return best

    def get_pick_pos(self, bbox: Sequence[int], target: str = "") -> Position3D:
        box = self._check_bbox(bbox)
        cx, cy = box.center
        obj = self._best_match(box)
        z = obj.depth_mm if obj is not None else self.scene.table_depth_mm
        return Position3D(cx, cy, z)

    def move_arm_to(self, pos: Position3D) -> bool:
        # Kinematics-free: every pose is reachable; only injected faults fail.
        return not (self._rng.random() < self.faults.p_action_fail)

    # actions

    def pick(self, target: str, bbox: Sequence[int]) -> SkillOutcome:
        if self.scene.holding is not None:
            return SkillOutcome.failed("gripper already holding an object")
        pos = self.get_pick_pos(bbox, target)
        if not self.move_arm_to(pos):
            return SkillOutcome.failed(self.evaluator())
        obj = self._best_match(BBox(*bbox))
        if obj is None:
            return SkillOutcome.failed("nothing to grasp at the given bbox")
        if obj.label != target:
            return SkillOutcome.failed(f"object at the given bbox is a {obj.label}, not a {target}")
        obj.held = True
        self.scene.holding = obj.id
        return SkillOutcome.success()

    def place(self, target: str, bbox: Sequence[int]) -> SkillOutcome:
        if self.scene.holding is None:
            return SkillOutcome.failed("gripper is empty")
        pos = self.get_pick_pos(bbox, target)
        if not self.move_arm_to(pos):
            return SkillOutcome.failed(self.evaluator())
        obj = self.scene.get(self.scene.holding)
        cx, cy = BBox(*bbox).center
        ocx, ocy = obj.bbox.center
        obj.bbox = obj.bbox.shifted(int(round(cx - ocx)), int(round(cy - ocy))).clamped_into(*self.bounds)
        obj.held = False
        self.scene.holding = None
        return SkillOutcome.success()

    def push(self, target: str, bbox: Sequence[int]) -> SkillOutcome:
        if self.scene.holding is not None:
            return SkillOutcome.failed("cannot push while holding an object")
        pos = self.get_pick_pos(bbox, target)
        if not self.move_arm_to(pos):
            return SkillOutcome.failed(self.evaluator())
        obj = self._best_match(BBox(*bbox))
        if obj is None:
            return SkillOutcome.failed("nothing to push at the given bbox")
        if obj.label != target:
            return SkillOutcome.failed(f"object at the given bbox is a {obj.label}, not a {target}")
        obj.bbox = obj.bbox.shifted(PUSH_DISTANCE_PX, 0).clamped_into(*self.bounds)
        return SkillOutcome.success()

    def move_home(self) -> SkillOutcome:
        w, h = self.bounds
        if not self.move_arm_to(Position3D(w / 2, h / 2, 0.0)):
            return SkillOutcome.failed(self.evaluator())
        return SkillOutcome.success()

    def open_gripper(self) -> SkillOutcome:
        if self.scene.holding is not None:
            self.scene.get(self.scene.holding).held = False
            self.scene.holding = None
        return SkillOutcome.success()

    def close_gripper(self) -> SkillOutcome:
        return SkillOutcome.success()

    def task_done(self) -> SkillOutcome:
        return SkillOutcome.success()


# Free-function forms; each operates on a SimEnv.

def detect_2d(env: SimEnv, target: str) -> SkillOutcome:
    return env.detect_2d(target)


def get_pick_pos(env: SimEnv, bbox: Sequence[int], target: str = "") -> Position3D:
    return env.get_pick_pos(bbox, target)


def jitter_scene(scene: Scene, rng: random.Random, max_shift_px: int = 10, max_depth_mm: float = 20.0) -> Scene:
    """Copy of ``scene`` with each object shifted/deepened by a bounded random amount."""
    out = scene.copy()
    w, h = out.bounds
    for o in out.objects:
        dx = rng.randint(-max_shift_px, max_shift_px)
        dy = rng.randint(-max_shift_px, max_shift_px)
        o.bbox = o.bbox.shifted(dx, dy).clamped_into(w, h)
        o.depth_mm = max(1.0, round(o.depth_mm + rng.uniform(-max_depth_mm, max_depth_mm), 1))
    out.validate()
    return out
