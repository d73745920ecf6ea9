"""Text-completion backends: scripted playback, HTTP chat endpoint, and the
rule-based reference planner."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence

import httpx

from .geometry import QUALIFIERS, BBox, describe_key, qualifier_key, resolve_qualifier
from .memory import ParsedContext, parse_context
from .skills import FunctionCall
from .wire import ModelTurn, ReasoningTrace, prompt_section, render_call, render_turn

log = logging.getLogger(__name__)

DETECT = "2dDetect"
TERMINAL = "taskDone"
VERBS = ("pick", "place", "push", "home")


class BackendError(Exception):
    pass


class TransportError(BackendError):
    pass


class BackendTimeout(BackendError):
    pass


class ScriptExhausted(BackendError):
    pass


class UnresolvableState(BackendError):
    pass


@dataclass(frozen=True)
class BackendRequest:
    prompt: str
    system: str = ""
    max_output_tokens: int = 512
    temperature: float = 0.0
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be nonempty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")


class Backend(Protocol):
    name: str

    def complete(self, request: BackendRequest) -> str: ...


# ---------------------------------------------------------------- scripted


class ScriptedBackend:
    """Plays back a fixed list of model outputs, one per request."""

    name = "scripted"

    def __init__(self, script: Iterable[str]) -> None:
        self.script = list(script)
        self.calls = 0

    def complete(self, request: BackendRequest) -> str:
        if self.calls >= len(self.script):
            raise ScriptExhausted(f"script exhausted after {len(self.script)} turns")
        text = self.script[self.calls]
        self.calls += 1
        return text

    @classmethod
    def from_file(cls, path: str | Path) -> ScriptedBackend:
        return cls(load_script(path))


def load_script(path: str | Path) -> list[str]:
    """Read a script file: one JSON-encoded model output per line."""
    turns = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        value = json.loads(line)
        if not isinstance(value, str):
            raise ValueError(f"{path}:{n}: expected a JSON string")
        turns.append(value)
    return turns


def dump_script(turns: Sequence[str], path: str | Path) -> None:
    body = "".join(json.dumps(t, ensure_ascii=False) + "\n" for t in turns)
    Path(path).write_text(body, encoding="utf-8")


# ---------------------------------------------------------------- HTTP


class HTTPBackend:
    """Chat-completions client (``POST {base_url}/chat/completions``).

    Transport failures, 429 and 5xx responses are retried with exponential
    backoff up to ``max_retries`` times; the assistant text is read from
    ``choices[0].message.content``.
    """

    name = "http"

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        api_key_env: str | None = "SKILLPLAN_API_KEY",
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        transport: httpx.BaseTransport | None = None,
        sleep=time.sleep,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(api_key_env) if api_key_env else None
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def close(self) -> None:
        self._client.close()

    def payload(self, request: BackendRequest) -> dict[str, Any]:
        messages = []
        if request.system:
            messages.append({"role": "system", "content": request.system})
        messages.append({"role": "user", "content": request.prompt})
        body: dict[str, Any] = {
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        if request.stop_sequences:
            body["stop"] = list(request.stop_sequences)
        return body

    def complete(self, request: BackendRequest) -> str:
        url = f"{self.base_url}/chat/completions"
        body = self.payload(request)
        last: BackendError | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                delay = self.backoff_base * 2 ** (attempt - 1)
                log.warning("retrying %s in %.2fs (attempt %d): %s", url, delay, attempt + 1, last)
                self._sleep(delay)
            try:
                resp = self._client.post(url, json=body)
            except httpx.TimeoutException as e:
                last = BackendTimeout(f"request to {url} timed out: {e}")
                continue
            except httpx.TransportError as e:
                last = TransportError(f"cannot reach {url}: {e}")
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = TransportError(f"{url} answered HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise TransportError(f"{url} answered HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                data = resp.json()
            except ValueError:
                raise TransportError(f"{url} returned a non-JSON body") from None
            return extract_text(data)
        assert last is not None
        raise last


def extract_text(data: Mapping[str, Any]) -> str:
    try:
        content = data["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as e:
        raise TransportError(f"response has no choices[0].message.content: {e!r}") from None
    if not isinstance(content, str):
        raise TransportError("assistant content is not text")
    return content


# ---------------------------------------------------------------- goal programs


@dataclass(frozen=True)
class Target:
    label: str
    qualifier: str | None = None

    def phrase(self) -> str:
        return f"the {self.qualifier} {self.label}" if self.qualifier else f"the {self.label}"


@dataclass(frozen=True)
class GoalStep:
    verb: str
    target: Target | None = None
    destination: Target | None = None

    def __post_init__(self) -> None:
        if self.verb not in VERBS:
            raise ValueError(f"unknown goal verb {self.verb!r}")
        if self.verb != "home" and self.target is None:
            raise ValueError(f"{self.verb} needs an object")
        if self.destination is not None and self.verb != "pick":
            raise ValueError("only pick steps take a destination")
        for t in (self.target, self.destination):
            if t is not None and t.qualifier not in (None, *QUALIFIERS):
                raise ValueError(f"unknown qualifier {t.qualifier!r}")


@dataclass(frozen=True)
class Subgoal:
    skill: str
    target: Target | None = None

    @property
    def needs_perception(self) -> bool:
        return self.target is not None


@dataclass(frozen=True)
class GoalProgram:
    steps: tuple[GoalStep, ...]

    def __post_init__(self) -> None:
        if not self.steps:
            raise ValueError("goal program is empty")

    def subgoals(self) -> list[Subgoal]:
        out = []
        for s in self.steps:
            if s.verb == "home":
                out.append(Subgoal("moveHome"))
            else:
                out.append(Subgoal(s.verb, s.target))
                if s.destination is not None:
                    out.append(Subgoal("place", s.destination))
        return out

    def expected_chain(self) -> list[str]:
        chain = []
        for sg in self.subgoals():
            if sg.needs_perception:
                chain.append(DETECT)
            chain.append(sg.skill)
        return chain

    def instruction(self) -> str:
        clauses = []
        for s in self.steps:
            if s.verb == "home":
                clauses.append("move the arm home")
            elif s.verb == "pick":
                text = f"pick up {s.target.phrase()}"
                if s.destination is not None:
                    text += f" and place it onto {s.destination.phrase()}"
                clauses.append(text)
            elif s.verb == "place":
                clauses.append(f"place it onto {s.target.phrase()}")
            else:
                clauses.append(f"push {s.target.phrase()}")
        text = ", then ".join(clauses)
        return text[0].upper() + text[1:] + "."

    def to_list(self) -> list[dict[str, Any]]:
        def t(x: Target | None):
            return None if x is None else {"label": x.label, "qualifier": x.qualifier or "none"}

        out = []
        for s in self.steps:
            item: dict[str, Any] = {"verb": s.verb}
            if s.target is not None:
                item["object"] = t(s.target)
            if s.destination is not None:
                item["destination"] = t(s.destination)
            out.append(item)
        return out

    @classmethod
    def from_list(cls, items: Sequence[Mapping[str, Any]]) -> GoalProgram:
        def t(x):
            if x is None:
                return None
            if isinstance(x, str):
                return Target(x)
            q = x.get("qualifier") or "none"
            return Target(str(x["label"]), None if q == "none" else q)

        return cls(tuple(GoalStep(i["verb"], t(i.get("object")), t(i.get("destination"))) for i in items))


# ---------------------------------------------------------------- reference planner


def _boxes(bboxes: Sequence[BBox]) -> str:
    return ", ".join(str(b) for b in bboxes)


def _feedback_text(ctx: ParsedContext) -> str:
    if not ctx.entries:
        return ""
    last = ctx.entries[-1]
    call = render_call(last.call)
    if last.status == "success":
        return f"Step {last.step} {call} succeeded."
    text = f"Step {last.step} {call} failed: {last.summary or 'no feedback'}."
    if last.call.skill == DETECT:
        return text + " The detection must be called again to obtain perception data."
    return text + " The scene may have changed, so perception is refreshed before retrying."


def _param_text(target: Target, boxes: Sequence[BBox], chosen: BBox) -> str:
    if target.qualifier is None:
        return f"Perceived {len(boxes)} {target.label}(s): {_boxes(boxes)}. Using {chosen}."
    key = describe_key(target.qualifier)
    listing = "; ".join(f"{b} {key} {qualifier_key(target.qualifier, b)}" for b in boxes)
    return (
        f"Perceived {len(boxes)} {target.label}(s): {listing}. "
        f"The {target.qualifier} {target.label} is {chosen} ({key} "
        f"{qualifier_key(target.qualifier, chosen)}); recomputed over all detections, it is the "
        f"{'maximum' if target.qualifier in ('largest', 'rightmost') else 'minimum'}."
    )


def reference_next_turn(goal: GoalProgram, ctx: ParsedContext | str) -> ModelTurn:
    """The correct next turn for ``goal`` given the episode history so far.

    Progress is the number of successful action calls in memory; an action is
    emitted only right after a successful detection of its object's label.
    """
    if isinstance(ctx, str):
        ctx = parse_context(ctx)
    subgoals = goal.subgoals()
    done = sum(
        1 for e in ctx.entries if e.status == "success" and e.call.skill not in (DETECT, TERMINAL)
    )
    feedback = _feedback_text(ctx)
    if done > len(subgoals):
        raise UnresolvableState(f"{done} actions succeeded but the goal has only {len(subgoals)}")
    if done == len(subgoals):
        return ModelTurn(
            ReasoningTrace(feedback, f"All {len(subgoals)} subgoals are complete; the task is done.",
                           "taskDone takes no parameters."),
            FunctionCall(TERMINAL, {}),
        )
    sg = subgoals[done]
    progress = f"Subgoal {done + 1} of {len(subgoals)}: {sg.skill}"
    if not sg.needs_perception:
        return ModelTurn(
            ReasoningTrace(feedback, f"{progress}; consistent with the task.", f"{sg.skill} takes no parameters."),
            FunctionCall(sg.skill, {}),
        )
    target = sg.target
    last = ctx.entries[-1] if ctx.entries else None
    fresh = (
        last is not None
        and last.status == "success"
        and last.call.skill == DETECT
        and last.call.args.get("target") == target.label
        and ctx.perception_step == last.step
        and ctx.perception
    )
    if not fresh:
        return ModelTurn(
            ReasoningTrace(
                feedback,
                f"{progress} on {target.phrase()}; current perception of {target.label} is required first.",
                f"Detect target \"{target.label}\".",
            ),
            FunctionCall(DETECT, {"target": target.label}),
        )
    boxes = ctx.perception
    chosen = resolve_qualifier(target.qualifier, boxes) if target.qualifier else BBox(*boxes[0])
    return ModelTurn(
        ReasoningTrace(
            feedback,
            f"{progress} on {target.phrase()}; this matches the task.",
            _param_text(target, boxes, chosen),
        ),
        FunctionCall(sg.skill, {"target": target.label, "bbox": chosen}),
    )


class ReferenceBackend:
    """Deterministic oracle backend that reads only the memory section of the
    prompt and the episode's goal program."""

    name = "reference"

    def __init__(self, goal: GoalProgram) -> None:
        self.goal = goal

    def complete(self, request: BackendRequest) -> str:
        ctx = parse_context(prompt_section(request.prompt, "Memory"))
        return render_turn(reference_next_turn(self.goal, ctx))
