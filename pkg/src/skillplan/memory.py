"""Per-episode action history and the compacted context rendered into prompts."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Sequence

from .geometry import BBox
from .skills import FunctionCall, SkillOutcome, is_bbox_list
from .wire import (
    NO_HISTORY,
    ModelTurn,
    ParseError,
    parse_call,
    parse_call_prefix,
    parse_value_at,
    render_call,
    render_turn,
    render_value,
)


class StepOrderError(ValueError):
    pass


@dataclass
class MemoryEntry:
    step: int
    call_text: str
    status: str
    result_summary: str = ""
    full_result: tuple[BBox, ...] | None = None

    @property
    def skill(self) -> str:
        return self.call_text.split("(", 1)[0]

    @property
    def call(self) -> FunctionCall:
        return parse_call(self.call_text)

    def line(self) -> str:
        tail = f": {self.result_summary}" if self.result_summary else ""
        return f"step {self.step}: {self.call_text} -> {self.status}{tail}"


def _one_line(text: str) -> str:
    return " ".join(text.split())


def summarize(outcome: SkillOutcome) -> str:
    if outcome.status == "failed":
        return _one_line(outcome.feedback or "")
    if is_bbox_list(outcome.result):
        return f"detected {len(outcome.result)} objects"
    return ""


class Memory:
    """Compacted history: one summary line per step, and the full bbox list of
    only the most recent successful perception."""

    def __init__(self) -> None:
        self.entries: list[MemoryEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def last(self) -> MemoryEntry | None:
        return self.entries[-1] if self.entries else None

    @property
    def next_step(self) -> int:
        return self.entries[-1].step + 1 if self.entries else 1

    def append(self, record: Any) -> Memory:
        """Append a step record (anything with ``index``, ``turn`` and ``outcome``)."""
        return self.append_outcome(record.index, record.turn.call, record.outcome, turn=record.turn)

    def append_outcome(
        self, step: int, call: FunctionCall, outcome: SkillOutcome, turn: ModelTurn | None = None
    ) -> Memory:
        if step != self.next_step:
            raise StepOrderError(f"expected step {self.next_step}, got {step}")
        full = None
        if outcome.status == "success" and is_bbox_list(outcome.result):
            full = tuple(BBox(*b) for b in outcome.result)
            for e in self.entries:
                e.full_result = None
        self.entries.append(
            MemoryEntry(step, render_call(call), outcome.status, summarize(outcome), full)
        )
        return self

    def latest_perception(self) -> MemoryEntry | None:
        for e in reversed(self.entries):
            if e.full_result is not None:
                return e
        return None

    def render_context(self) -> str:
        if not self.entries:
            return NO_HISTORY
        lines = [e.line() for e in self.entries]
        kept = self.latest_perception()
        if kept is not None:
            lines.append(f"latest perception (step {kept.step}): {render_value(kept.full_result)}")
        return "\n".join(lines)


def render_context(memory: Memory) -> str:
    return memory.render_context()


class FullHistoryMemory(Memory):
    """Uncompacted history: every turn verbatim with its full result.

    Stands in for a planner without a memory module.
    """

    def __init__(self) -> None:
        super().__init__()
        self._blocks: list[str] = []

    def append_outcome(
        self, step: int, call: FunctionCall, outcome: SkillOutcome, turn: ModelTurn | None = None
    ) -> Memory:
        super().append_outcome(step, call, outcome, turn)
        result = render_value(outcome.result) if is_bbox_list(outcome.result) else "none"
        turn_text = render_turn(turn) if turn is not None else "call: " + render_call(call) + "\n"
        self._blocks.append(
            f"### step {step}\n{turn_text}"
            f"status: {outcome.status}\nresult: {result}\nfeedback: {outcome.feedback or ''}"
        )
        return self

    def render_context(self) -> str:
        if not self._blocks:
            return NO_HISTORY
        return "\n".join(self._blocks)


# ---------------------------------------------------------------- reading a rendered context

_LINE_RE = re.compile(r"step (\d+): ")
_STATUS_RE = re.compile(r" -> (success|failed)(?:: (.*))?\Z")
_PERCEPTION_RE = re.compile(r"latest perception \(step (\d+)\): ")


@dataclass
class ParsedEntry:
    step: int
    call: FunctionCall
    status: str
    summary: str = ""


@dataclass
class ParsedContext:
    entries: list[ParsedEntry] = field(default_factory=list)
    perception_step: int | None = None
    perception: tuple[BBox, ...] | None = None


def parse_context(text: str) -> ParsedContext:
    """Inverse of ``Memory.render_context`` (summaries come back as text)."""
    ctx = ParsedContext()
    text = text.strip()
    if not text or text == NO_HISTORY:
        return ctx
    for line in text.split("\n"):
        m = _LINE_RE.match(line)
        if m:
            call, end = parse_call_prefix(line, m.end())
            sm = _STATUS_RE.match(line, end)
            if sm is None:
                raise ParseError("malformed_args", (end, len(line)), f"bad memory line: {line!r}")
            ctx.entries.append(ParsedEntry(int(m.group(1)), call, sm.group(1), sm.group(2) or ""))
            continue
        m = _PERCEPTION_RE.match(line)
        if m:
            value, _ = parse_value_at(line, m.end())
            ctx.perception_step = int(m.group(1))
            ctx.perception = tuple(BBox(*b) for b in value)
            continue
        raise ParseError("malformed_args", (0, len(line)), f"unrecognized memory line: {line!r}")
    return ctx


def perception_of(entries: Sequence[ParsedEntry], step: int | None) -> ParsedEntry | None:
    for e in entries:
        if e.step == step:
            return e
    return None
