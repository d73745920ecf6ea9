"""Text wire format for one planner decision, plus prompt assembly.

A turn is three tagged reasoning sections followed by a single call line::

    <feedback>...</feedback>
    <goal>...</goal>
    <params>...</params>
    call: pick(target="block", bbox=[10,10,50,50])

The grammar is written out in docs/wire_format.md.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Any

from .geometry import BBox
from .skills import FunctionCall, is_bbox, is_bbox_list

SECTIONS = ("feedback", "goal", "params")
_TAGS = tuple(t for s in SECTIONS for t in (f"<{s}>", f"</{s}>"))

_SKILL_RE = re.compile(r"[0-9]*[A-Za-z][A-Za-z0-9_]*")
_PARAM_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*")
_NUMBER_RE = re.compile(r"-?[0-9]+(\.[0-9]+)?([eE][+-]?[0-9]+)?")
_INT_RE = re.compile(r"-?[0-9]+")
_WS = " \t\r\n\f\v"

NO_HISTORY = "no history yet"

SYSTEM_PREAMBLE = """\
You are a robot task planner. Each reply decides exactly one next skill call.
Reason in three sections, in this order, then emit one call line:
<feedback> check the outcome of the previous step; if a detection came back empty, detect again </feedback>
<goal> restate the subgoal this step serves and confirm it matches the task </goal>
<params> derive every argument from the latest perception result and check it (e.g. recompute areas for "largest") </params>
call: skillName(param="text", bbox=[x_min,y_min,x_max,y_max])
Strings are double-quoted, bboxes are four integers. Call taskDone() once the task is complete."""


class ParseError(Exception):
    """Raised by the parser; ``code`` is one of the fixed error codes."""

    CODES = ("no_call_found", "multiple_calls", "malformed_args", "missing_section", "trailing_garbage")

    def __init__(self, code: str, span: tuple[int, int], detail: str) -> None:
        super().__init__(f"{code} at {span[0]}:{span[1]}: {detail}")
        self.code = code
        self.span = span
        self.detail = detail


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class ReasoningTrace:
    feedback: str
    goal: str
    params: str


@dataclass
class ModelTurn:
    trace: ReasoningTrace
    call: FunctionCall


# ---------------------------------------------------------------- rendering


def render_value(value: Any) -> str:
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, bool):
        raise RenderError("booleans are not wire values")
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise RenderError(f"non-finite number {value!r}")
        return repr(value)
    if is_bbox(value):
        return "[" + ",".join(str(v) for v in value) + "]"
    if is_bbox_list(value):
        return "[" + ",".join(render_value(b) for b in value) + "]"
    raise RenderError(f"cannot render {type(value).__name__} value")


def render_call(call: FunctionCall) -> str:
    if not isinstance(call.skill, str) or not _SKILL_RE.fullmatch(call.skill):
        raise RenderError(f"bad skill name {call.skill!r}")
    parts = []
    for name, value in call.args.items():
        if not isinstance(name, str) or not _PARAM_RE.fullmatch(name):
            raise RenderError(f"bad argument name {name!r}")
        parts.append(f"{name}={render_value(value)}")
    return f"{call.skill}({', '.join(parts)})"


def _check_section(name: str, text: str) -> None:
    if not isinstance(text, str):
        raise RenderError(f"{name} section must be text")
    if text != text.strip(_WS):
        raise RenderError(f"{name} section has surrounding whitespace")
    if name != "feedback" and not text:
        raise RenderError(f"{name} section is empty")
    for tag in _TAGS:
        if tag in text:
            raise RenderError(f"{name} section contains {tag}")
    if any(_is_call_line(line) for line in text.split("\n")):
        raise RenderError(f"{name} section contains a call line")


def render_turn(turn: ModelTurn) -> str:
    """Canonical text of a turn; raises RenderError if the turn breaks its invariants."""
    out = []
    for name in SECTIONS:
        body = getattr(turn.trace, name)
        _check_section(name, body)
        out.append(f"<{name}>\n{body}\n</{name}>" if body else f"<{name}></{name}>")
    out.append("call: " + render_call(turn.call))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- parsing


def _is_call_line(line: str) -> bool:
    return line.lstrip(_WS).startswith("call:")


def _call_lines(text: str) -> list[int]:
    """Offsets of every line whose first non-blank token is ``call:``."""
    starts, pos = [], 0
    for line in text.split("\n"):
        if _is_call_line(line):
            starts.append(pos + (len(line) - len(line.lstrip(_WS))))
        pos += len(line) + 1
    return starts


class _Cursor:
    def __init__(self, text: str, pos: int = 0, end: int | None = None) -> None:
        self.text = text
        self.pos = pos
        self.end = len(text) if end is None else end

    def skip_ws(self) -> None:
        while self.pos < self.end and self.text[self.pos] in _WS:
            self.pos += 1

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < self.end else ""

    def fail(self, detail: str, code: str = "malformed_args") -> ParseError:
        lo = min(self.pos, len(self.text))
        return ParseError(code, (lo, min(lo + 1, len(self.text))), detail)

    def expect(self, ch: str) -> None:
        self.skip_ws()
        if self.peek() != ch:
            raise self.fail(f"expected {ch!r}, found {self.peek() or 'end of input'!r}")
        self.pos += 1

    def match(self, pattern: re.Pattern) -> str | None:
        m = pattern.match(self.text, self.pos, self.end)
        if m is None:
            return None
        self.pos = m.end()
        return m.group(0)


def _parse_string(cur: _Cursor) -> str:
    start = cur.pos
    cur.pos += 1
    while cur.pos < cur.end:
        ch = cur.text[cur.pos]
        if ch == "\\":
            cur.pos += 2
            continue
        if ch == '"':
            cur.pos += 1
            try:
                return json.loads(cur.text[start:cur.pos])
            except ValueError as e:
                cur.pos = start
                raise cur.fail(f"bad string literal: {e}") from None
        cur.pos += 1
    cur.pos = start
    raise cur.fail("unterminated string")


def _parse_int(cur: _Cursor) -> int:
    cur.skip_ws()
    raw = cur.match(_INT_RE)
    if raw is None:
        raise cur.fail("expected an integer bbox coordinate")
    try:
        return int(raw)
    except ValueError:
        raise cur.fail("integer literal too long") from None


def _parse_bbox(cur: _Cursor) -> BBox:
    cur.expect("[")
    vals = [_parse_int(cur)]
    for _ in range(3):
        cur.expect(",")
        vals.append(_parse_int(cur))
    cur.expect("]")
    return BBox(*vals)


def _parse_number(cur: _Cursor) -> int | float:
    raw = cur.match(_NUMBER_RE)
    if raw is None:
        raise cur.fail("expected a value")
    try:
        if _INT_RE.fullmatch(raw):
            return int(raw)
        value = float(raw)
    except ValueError:
        raise cur.fail("number literal out of range") from None
    if not math.isfinite(value):
        raise cur.fail("number literal out of range")
    return value


def _parse_value(cur: _Cursor) -> Any:
    cur.skip_ws()
    ch = cur.peek()
    if ch == '"':
        return _parse_string(cur)
    if ch == "[":
        save = cur.pos
        cur.pos += 1
        cur.skip_ws()
        nested = cur.peek() == "["
        cur.pos = save
        if not nested:
            return _parse_bbox(cur)
        cur.expect("[")
        boxes = [_parse_bbox(cur)]
        while True:
            cur.skip_ws()
            if cur.peek() == "]":
                cur.pos += 1
                return tuple(boxes)
            cur.expect(",")
            boxes.append(_parse_bbox(cur))
    return _parse_number(cur)


def _parse_call_at(cur: _Cursor) -> FunctionCall:
    cur.skip_ws()
    name = cur.match(_SKILL_RE)
    if name is None:
        raise cur.fail("expected a skill name")
    cur.expect("(")
    args: dict[str, Any] = {}
    cur.skip_ws()
    if cur.peek() == ")":
        cur.pos += 1
        return FunctionCall(name, args)
    while True:
        cur.skip_ws()
        key_at = cur.pos
        key = cur.match(_PARAM_RE)
        if key is None:
            raise cur.fail("expected an argument name")
        if key in args:
            cur.pos = key_at
            raise cur.fail(f"duplicate argument {key!r}")
        cur.expect("=")
        args[key] = _parse_value(cur)
        cur.skip_ws()
        if cur.peek() == ",":
            cur.pos += 1
            continue
        cur.expect(")")
        return FunctionCall(name, args)


def parse_call(text: str) -> FunctionCall:
    """Parse a bare ``name(arg=value, ...)`` expression (no ``call:`` prefix)."""
    cur = _Cursor(text)
    call = _parse_call_at(cur)
    cur.skip_ws()
    if cur.pos < cur.end:
        raise cur.fail("unexpected text after call", "trailing_garbage")
    return call


def parse_call_prefix(text: str, pos: int = 0) -> tuple[FunctionCall, int]:
    """Parse a call starting at ``pos``; return it with the offset just past ``)``."""
    cur = _Cursor(text, pos)
    call = _parse_call_at(cur)
    return call, cur.pos


def parse_value_at(text: str, pos: int = 0) -> tuple[Any, int]:
    """Parse one argument value starting at ``pos``; return it with the end offset."""
    cur = _Cursor(text, pos)
    value = _parse_value(cur)
    return value, cur.pos


def _parse_sections(text: str, end: int) -> ReasoningTrace:
    cur = _Cursor(text, 0, end)
    bodies = {}
    for name in SECTIONS:
        open_tag, close_tag = f"<{name}>", f"</{name}>"
        cur.skip_ws()
        if not text.startswith(open_tag, cur.pos) or cur.pos + len(open_tag) > end:
            if text.find(open_tag, cur.pos, end) >= 0:
                raise cur.fail(f"unexpected text before {open_tag}", "trailing_garbage")
            raise ParseError("missing_section", (cur.pos, end), f"missing {open_tag} section")
        body_start = cur.pos + len(open_tag)
        close_at = text.find(close_tag, body_start, end)
        if close_at < 0:
            raise ParseError("missing_section", (cur.pos, end), f"unterminated {open_tag} section")
        body = text[body_start:close_at]
        for tag in _TAGS:
            if tag in body:
                raise ParseError(
                    "missing_section", (body_start, close_at), f"{open_tag} section contains {tag}"
                )
        body = body.strip(_WS)
        if name != "feedback" and not body:
            raise ParseError("missing_section", (body_start, close_at), f"empty {open_tag} section")
        bodies[name] = body
        cur.pos = close_at + len(close_tag)
    cur.skip_ws()
    if cur.pos < end:
        raise ParseError("trailing_garbage", (cur.pos, end), "unexpected text between sections and call")
    return ReasoningTrace(**bodies)


def parse_model_turn(text: str | bytes) -> ModelTurn:
    """Parse one model turn.

    Raises ParseError (never anything else) for any input that is not a
    well-formed turn.
    """
    if isinstance(text, (bytes, bytearray)):
        text = bytes(text).decode("utf-8", errors="replace")
    if not isinstance(text, str):
        raise ParseError("no_call_found", (0, 0), f"expected text, got {type(text).__name__}")
    starts = _call_lines(text)
    if not starts:
        raise ParseError("no_call_found", (0, len(text)), "no 'call:' line")
    if len(starts) > 1:
        nl = text.find("\n", starts[1])
        raise ParseError("multiple_calls", (starts[1], len(text) if nl < 0 else nl), f"{len(starts)} call lines")
    call_at = starts[0]
    trace = _parse_sections(text, call_at)
    cur = _Cursor(text, call_at + len("call:"))
    call = _parse_call_at(cur)
    cur.skip_ws()
    if cur.pos < len(text):
        raise ParseError("trailing_garbage", (cur.pos, len(text)), "unexpected text after the call")
    return ModelTurn(trace, call)


# ---------------------------------------------------------------- prompts


@dataclass(frozen=True)
class Prompt:
    system: str
    user: str

    @property
    def text(self) -> str:
        return f"{self.system}\n\n{self.user}"


def assemble_prompt(task_instruction: str, catalog: str, memory_context: str) -> Prompt:
    if not catalog.strip():
        raise ValueError("skill catalog is empty")
    memory = memory_context.strip() or NO_HISTORY
    user = (
        f"## Skills\n{catalog}\n\n"
        f"## Memory\n{memory}\n\n"
        f"## Task\n{task_instruction.strip()}\n"
    )
    return Prompt(SYSTEM_PREAMBLE, user)


def prompt_section(prompt: str, heading: str) -> str:
    """Body of a ``## heading`` block from an assembled user prompt."""
    marker = f"## {heading}\n"
    start = prompt.find(marker)
    if start < 0:
        return ""
    start += len(marker)
    nxt = prompt.find("\n## ", start)
    body = prompt[start:] if nxt < 0 else prompt[start:nxt]
    return body.strip("\n")
