"""Seed tasks -> augmented tasks -> per-step decision samples -> chat JSONL.

Augmentation is deterministic: object labels are substituted from a lexicon,
scene boxes and depths are jittered, and the instruction is re-rendered from
its template. Every executed planner step of the reference backend becomes one
training sample whose context is the exact prompt the planner assembled.
"""

from __future__ import annotations

import json
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import perm
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from .backend import GoalProgram, ReferenceBackend, ScriptedBackend
from .geometry import action_phrases
from .memory import Memory
from .planner import PlannerConfig, run_episode
from .simenv import NO_FAULTS, Scene, SceneError, SimEnv, jitter_scene
from .skills import SkillRegistry, default_registry
from .tasks import CATEGORIES, TaskSpec, bundled_path
from .wire import SYSTEM_PREAMBLE, ParseError, parse_model_turn

MIN_CHAIN, MAX_CHAIN = 2, 13
SLOT_RE = re.compile(r"\{([a-z])\}")
LABEL_RE = re.compile(r"[a-z][a-z_]*\Z")

DEFAULT_LEXICON = (
    "block", "cube", "ball", "box", "bowl", "tray", "cup", "plate", "can",
    "bottle", "sponge", "apple", "lemon", "marker", "mug", "basket",
)


class DatasetError(ValueError):
    pass


class SeedValidationError(DatasetError):
    """Bad seed file; ``where`` points at the offending entry/field."""

    def __init__(self, where: str, detail: str) -> None:
        super().__init__(f"{where}: {detail}")
        self.where = where
        self.detail = detail


class LexiconExhausted(DatasetError):
    pass


# ---------------------------------------------------------------- seeds


@dataclass
class SeedTask:
    id: str
    category: str
    slots: tuple[str, ...]
    instruction_template: str
    goal_program_template: list[dict[str, Any]]
    scene_template: dict[str, Any]
    chain_length: int

    def instantiate(self, labels: Mapping[str, str]) -> tuple[str, GoalProgram, Scene]:
        """Fill every ``{slot}`` with a concrete label."""
        missing = set(self.slots) - set(labels)
        if missing:
            raise DatasetError(f"{self.id}: no label for slots {sorted(missing)}")

        def fill(value: Any) -> Any:
            if isinstance(value, str):
                return SLOT_RE.sub(lambda m: labels[m.group(1)], value)
            if isinstance(value, list):
                return [fill(v) for v in value]
            if isinstance(value, dict):
                return {k: fill(v) for k, v in value.items()}
            return value

        instruction = fill(self.instruction_template)
        goal = GoalProgram.from_list(fill(self.goal_program_template))
        scene = Scene.from_dict(fill(self.scene_template))
        return instruction, goal, scene


def _line_of(text: str, needle: str) -> int | None:
    idx = text.find(needle)
    return None if idx < 0 else text.count("\n", 0, idx) + 1


def _check_seed(raw: Mapping[str, Any], where: str) -> SeedTask:
    for key in ("id", "category", "instruction_template", "goal_program", "scene", "chain_length"):
        if key not in raw:
            raise SeedValidationError(where, f"missing field {key!r}")
    sid = raw["id"]
    if not isinstance(sid, str) or not sid:
        raise SeedValidationError(f"{where}.id", "must be a nonempty string")
    if raw["category"] not in CATEGORIES:
        raise SeedValidationError(f"{where}.category", f"must be one of {CATEGORIES}")
    n = raw["chain_length"]
    if not isinstance(n, int) or isinstance(n, bool) or not MIN_CHAIN <= n <= MAX_CHAIN:
        raise SeedValidationError(f"{where}.chain_length", f"{n!r} is outside [{MIN_CHAIN}, {MAX_CHAIN}]")
    template = raw["instruction_template"]
    used = set(SLOT_RE.findall(template)) | set(SLOT_RE.findall(json.dumps(raw["scene"])))
    slots = tuple(raw.get("slots") or sorted(used))
    if not used <= set(slots):
        raise SeedValidationError(f"{where}.slots", f"undeclared slots {sorted(used - set(slots))}")
    seed = SeedTask(
        id=sid,
        category=raw["category"],
        slots=slots,
        instruction_template=template,
        goal_program_template=list(raw["goal_program"]),
        scene_template=dict(raw["scene"]),
        chain_length=n,
    )
    # probe instantiation with neutral labels to catch structural errors early
    probe = {s: f"obj{s}" for s in slots}
    try:
        instruction, goal, _scene = seed.instantiate(probe)
    except (KeyError, TypeError, ValueError, SceneError) as e:
        raise SeedValidationError(f"{where}.goal_program/scene", str(e)) from e
    if len(goal.expected_chain()) != n:
        raise SeedValidationError(
            f"{where}.chain_length", f"{n} but the goal program expands to {len(goal.expected_chain())} steps"
        )
    if action_phrases(instruction) != action_phrases(goal.instruction()):
        raise SeedValidationError(f"{where}.instruction_template", "action phrases disagree with the goal program")
    return seed


def load_seed_tasks(path: str | Path | None = None) -> list[SeedTask]:
    """Load and validate a seed file (default: the bundled 20 seeds), sorted by id."""
    path = Path(path) if path else bundled_path("seed_tasks.json")
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SeedValidationError(f"{path}:{e.lineno}", e.msg) from e
    items = data.get("seeds") if isinstance(data, dict) else data
    if not isinstance(items, list) or not items:
        raise SeedValidationError(str(path), "expected a nonempty 'seeds' list")
    seeds, seen = [], set()
    for i, raw in enumerate(items):
        sid = raw.get("id") if isinstance(raw, dict) else None
        line = _line_of(text, f'"{sid}"') if sid else None
        where = f"{path}:{line} seeds[{i}]" if line else f"{path} seeds[{i}]"
        if not isinstance(raw, dict):
            raise SeedValidationError(where, "entry must be an object")
        seed = _check_seed(raw, where)
        if seed.id in seen:
            raise SeedValidationError(f"{where}.id", f"duplicate id {seed.id!r}")
        seen.add(seed.id)
        seeds.append(seed)
    return sorted(seeds, key=lambda s: s.id)


# ---------------------------------------------------------------- augmentation


@dataclass(frozen=True)
class AugmentRules:
    lexicon: tuple[str, ...] = DEFAULT_LEXICON
    bbox_jitter_px: int = 10
    depth_jitter_mm: float = 20.0
    variants_per_labeling: int = 10

    def __post_init__(self) -> None:
        if len(set(self.lexicon)) != len(self.lexicon):
            raise DatasetError("lexicon has duplicate labels")
        bad = [w for w in self.lexicon if not LABEL_RE.match(w) or w in ("the", "a", "an")]
        if bad:
            raise DatasetError(f"unusable lexicon labels: {bad}")
        if self.variants_per_labeling < 1:
            raise DatasetError("variants_per_labeling must be >= 1")

    def combinations(self, n_slots: int) -> int:
        return perm(len(self.lexicon), n_slots) * self.variants_per_labeling


def _labeling(index: int, slots: Sequence[str], lexicon: Sequence[str]) -> dict[str, str]:
    """index-th injective slot->label assignment (mixed-radix decode)."""
    pool = list(lexicon)
    out = {}
    for s in slots:
        index, pick = divmod(index, len(pool))
        out[s] = pool.pop(pick)
    return out


def augment(
    seeds: Sequence[SeedTask], rules: AugmentRules | None = None, rng_seed: int = 0, factor: int = 10
) -> list[TaskSpec]:
    """|seeds| x factor tasks, each a distinct (labeling, jitter variant) of its seed."""
    if factor < 1:
        raise DatasetError("factor must be >= 1")
    rules = rules or AugmentRules()
    out = []
    for seed in seeds:
        total = rules.combinations(len(seed.slots))
        if factor > total:
            raise LexiconExhausted(
                f"{seed.id}: factor {factor} exceeds {total} distinct combinations "
                f"({len(rules.lexicon)} labels, {len(seed.slots)} slots, {rules.variants_per_labeling} variants)"
            )
        rng = random.Random(f"{rng_seed}:{seed.id}")
        for n, combo in enumerate(rng.sample(range(total), factor)):
            label_idx, variant = divmod(combo, rules.variants_per_labeling)
            labels = _labeling(label_idx, seed.slots, rules.lexicon)
            instruction, goal, scene = seed.instantiate(labels)
            jrng = random.Random(f"{rng_seed}:{seed.id}:{label_idx}:{variant}")
            scene = jitter_scene(scene, jrng, rules.bbox_jitter_px, rules.depth_jitter_mm)
            out.append(
                TaskSpec(
                    id=f"{seed.id}-{n:04d}",
                    instruction=instruction,
                    goal_program=goal,
                    scene=scene,
                    expected_chain=goal.expected_chain(),
                    category=seed.category,
                    meta={"seed": seed.id, "labels": labels, "variant": variant},
                )
            )
    return out


# ---------------------------------------------------------------- samples


@dataclass(frozen=True)
class DecisionSample:
    task_id: str
    step: int
    system_prompt: str
    context: str
    target_output: str

    def messages(self) -> list[dict[str, str]]:
        return [
            {"role": "system", "content": self.system_prompt},
            {"role": "user", "content": self.context},
            {"role": "assistant", "content": self.target_output},
        ]


@dataclass
class GenerationReport:
    samples: list[DecisionSample]
    aborted: list[tuple[str, str]] = field(default_factory=list)
    steps_per_task: dict[str, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.aborted


EnvFactory = Callable[[TaskSpec], SimEnv]


def _clean_env(task: TaskSpec) -> SimEnv:
    return SimEnv(task.scene.copy(), NO_FAULTS)


def generation_config(task: TaskSpec) -> PlannerConfig:
    return PlannerConfig(max_steps=2 * task.chain_length + 4, max_retries_per_step=3)


def samples_for_task(
    task: TaskSpec,
    registry: SkillRegistry | None = None,
    env_factory: EnvFactory | None = None,
    config: PlannerConfig | None = None,
) -> list[DecisionSample]:
    """Run the reference planner and isolate each executed step. Raises DatasetError on failure."""
    registry = registry or default_registry()
    env = (env_factory or _clean_env)(task)
    result = run_episode(task, env, registry, ReferenceBackend(task.goal_program), Memory(), config or generation_config(task))
    if not result.success:
        raise DatasetError(f"reference planner failed ({result.termination}): {result.error or ''}".rstrip(": "))
    samples = []
    for step in result.executed:
        target = step.outputs[-1]
        samples.append(DecisionSample(task.id, step.index, SYSTEM_PREAMBLE, step.prompt, target))
    return samples


def generate_samples(
    tasks: Sequence[TaskSpec],
    registry: SkillRegistry | None = None,
    env_factory: EnvFactory | None = None,
    config: PlannerConfig | None = None,
    *,
    workers: int = 1,
) -> GenerationReport:
    """One sample per executed step, terminal step included. Failed tasks land in ``aborted``."""
    registry = registry or default_registry()

    def one(task: TaskSpec) -> tuple[str, list[DecisionSample] | str]:
        try:
            return task.id, samples_for_task(task, registry, env_factory, config)
        except Exception as e:  # noqa: BLE001 - reported per task
            return task.id, f"{type(e).__name__}: {e}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, tasks))
    else:
        results = [one(t) for t in tasks]

    report = GenerationReport([])
    for tid, got in results:
        if isinstance(got, str):
            report.aborted.append((tid, got))
        else:
            report.samples.extend(got)
            report.steps_per_task[tid] = len(got)
    return report


def replay_task(
    task: TaskSpec,
    samples: Iterable[DecisionSample],
    registry: SkillRegistry | None = None,
    env_factory: EnvFactory | None = None,
    config: PlannerConfig | None = None,
) -> bool:
    """Closed-loop check: the task's own samples, replayed as a script, solve it."""
    script = [s.target_output for s in sorted(samples, key=lambda s: s.step) if s.task_id == task.id]
    env = (env_factory or _clean_env)(task)
    result = run_episode(
        task, env, registry or default_registry(), ScriptedBackend(script), Memory(), config or generation_config(task)
    )
    return result.success


def verify_samples(samples: Iterable[DecisionSample]) -> list[tuple[str, int, str]]:
    """Samples whose target does not parse, as (task_id, step, error code)."""
    bad = []
    for s in samples:
        try:
            parse_model_turn(s.target_output)
        except ParseError as e:
            bad.append((s.task_id, s.step, e.code))
    return bad


# ---------------------------------------------------------------- export


def export_chat_jsonl(samples: Sequence[DecisionSample], path: str | Path) -> int:
    if not samples:
        raise DatasetError("nothing to export")
    lines = [json.dumps({"messages": s.messages()}, ensure_ascii=False) for s in samples]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(lines)


def read_chat_jsonl(path: str | Path) -> list[list[dict[str, str]]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line)["messages"])
            except (json.JSONDecodeError, KeyError) as e:
                raise DatasetError(f"{path}:{n}: {e}") from e
    return out


def write_tasks(tasks: Sequence[TaskSpec], path: str | Path) -> None:
    payload = {"tasks": [t.to_dict() for t in tasks]}
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
