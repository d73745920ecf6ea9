"""Bounding boxes, qualifier resolution, and instruction phrase extraction."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import NamedTuple, Sequence

QUALIFIERS = ("largest", "smallest", "leftmost", "rightmost")


class BBox(NamedTuple):
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    @property
    def area(self) -> int:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def center(self) -> tuple[float, float]:
        return (self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2

    def within(self, width: int, height: int) -> bool:
        return 0 <= self.x_min < self.x_max <= width and 0 <= self.y_min < self.y_max <= height

    def shifted(self, dx: int, dy: int) -> BBox:
        return BBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def clamped_into(self, width: int, height: int) -> BBox:
        """Translate (never resize) so the box lies inside the image."""
        dx = max(0, -self.x_min) - max(0, self.x_max - width)
        dy = max(0, -self.y_min) - max(0, self.y_max - height)
        return self.shifted(dx, dy)

    def __str__(self) -> str:
        return f"[{self.x_min},{self.y_min},{self.x_max},{self.y_max}]"


def iou(a: Sequence[int], b: Sequence[int]) -> float:
    ix = max(0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter == 0:
        return 0.0
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


# (key over a bbox, True when the best key is the maximum)
_RULES = {
    "largest": (lambda b: (b[2] - b[0]) * (b[3] - b[1]), True),
    "smallest": (lambda b: (b[2] - b[0]) * (b[3] - b[1]), False),
    "leftmost": (lambda b: b[0], False),
    "rightmost": (lambda b: b[2], True),
}
_KEY_NAME = {"largest": "area", "smallest": "area", "leftmost": "x_min", "rightmost": "x_max"}


def qualifier_key(qualifier: str, bbox: Sequence[int]) -> int:
    return _RULES[qualifier][0](bbox)


def best_key(qualifier: str, bboxes: Sequence[Sequence[int]]) -> int:
    key, want_max = _RULES[qualifier]
    values = [key(b) for b in bboxes]
    return max(values) if want_max else min(values)


def resolve_qualifier(qualifier: str, bboxes: Sequence[Sequence[int]]) -> BBox:
    """First bbox (in perception order) attaining the qualifier's optimum."""
    if not bboxes:
        raise ValueError("cannot resolve a qualifier over an empty perception result")
    target = best_key(qualifier, bboxes)
    for b in bboxes:
        if qualifier_key(qualifier, b) == target:
            return BBox(*b)
    raise AssertionError("unreachable")


def satisfies_qualifier(qualifier: str, bbox: Sequence[int], bboxes: Sequence[Sequence[int]]) -> bool:
    return qualifier_key(qualifier, bbox) == best_key(qualifier, bboxes)


def qualifier_failure(qualifier: str, bbox: Sequence[int], bboxes: Sequence[Sequence[int]]) -> str | None:
    """Human-readable reason the bbox fails the qualifier, or None if it satisfies it."""
    if satisfies_qualifier(qualifier, bbox, bboxes):
        return None
    name = _KEY_NAME[qualifier]
    want_max = _RULES[qualifier][1]
    return (
        f"{name} {qualifier_key(qualifier, bbox)} is not "
        f"{'maximal' if want_max else 'minimal'} "
        f"({'max' if want_max else 'min'} {best_key(qualifier, bboxes)})"
    )


def describe_key(qualifier: str) -> str:
    return _KEY_NAME[qualifier]


VERB_SKILLS = {
    "pick": "pick",
    "grasp": "pick",
    "grab": "pick",
    "place": "place",
    "put": "place",
    "push": "push",
}

_PHRASE_RE = re.compile(
    r"\b(pick|grasp|grab|place|put|push)\b[^,.;]*?\b(?:the|a|an)\s+"
    r"(?:(largest|smallest|leftmost|rightmost)\s+)?([a-z][a-z_]*)"
)


@dataclass(frozen=True)
class ActionPhrase:
    skill: str
    qualifier: str | None
    label: str


def action_phrases(instruction: str) -> list[ActionPhrase]:
    """Ordered (skill, qualifier, label) phrases found in an instruction.

    "pick up the rightmost block and place it onto the largest block" gives
    pick/rightmost/block then place/largest/block.
    """
    return [
        ActionPhrase(VERB_SKILLS[m.group(1)], m.group(2), m.group(3))
        for m in _PHRASE_RE.finditer(instruction.lower())
    ]


def qualifier_for_call(instruction: str, skill: str, label: str, prior_successes: int) -> str | None:
    """Qualifier governing the ``prior_successes``-th execution of ``skill`` on ``label``."""
    matching = [p for p in action_phrases(instruction) if p.skill == skill and p.label == label.lower()]
    if prior_successes < len(matching):
        return matching[prior_successes].qualifier
    return None
