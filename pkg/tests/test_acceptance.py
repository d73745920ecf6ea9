"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest -v tests/test_acceptance.py`` (the lines are printed
even under output capture).
"""

from __future__ import annotations

import json
import random
import time
from pathlib import Path

from skillplan.backend import GoalProgram, ReferenceBackend, ScriptedBackend, reference_next_turn
from skillplan.cli import main as cli_main
from skillplan.dataset import (
    DEFAULT_LEXICON,
    augment,
    generate_samples,
    load_seed_tasks,
    read_chat_jsonl,
    replay_task,
)
from skillplan.geometry import BBox
from skillplan.harness import compute_cr, episode_seed, run_suite, run_task, task_succeeded
from skillplan.memory import FullHistoryMemory, Memory
from skillplan.planner import EpisodeResult, PlannerConfig, StepRecord, Verification, verify_parameters
from skillplan.simenv import FaultProfile, Scene, SceneObject, SimEnv, jitter_scene
from skillplan.skills import FunctionCall, SkillOutcome, default_registry
from skillplan.tasks import CATEGORIES, LENGTH_CLASSES, TaskSpec, load_suite
from skillplan.wire import ModelTurn, ParseError, ReasoningTrace, parse_model_turn, render_turn

# ---- pinned tolerances / sizes
SUITE_RUNTIME_S = 60.0          # criterion 1
SUITE_REPEATS = 3               # 30 tasks x 3 = 90 episodes
QUALIFIER_SCENES = 1000         # criterion 2
SCENE_OBJECTS = (2, 10)
FAULT_EPISODES = 200            # criterion 3
P_DETECT_EMPTY = 0.5
FAULT_RETRIES = 3
FUZZ_INPUTS = 100_000           # criterion 4
ROUNDTRIP_TURNS = 1_000
CR_LENGTHS = range(2, 9)        # criterion 5
DESK_SEEDS, DESK_FACTOR, DESK_TASKS = 20, 10, 200  # criterion 6
MEMORY_LENGTHS = (4, 8, 13)     # criterion 7
SEED = 0


def report(n: int, passed: bool, detail: str, capsys) -> None:
    with capsys.disabled():
        print(f"\n[{'PASS' if passed else 'FAIL'}] criterion {n}: {detail}")


def reference_factory(task):
    return ReferenceBackend(task.goal_program)


# ---------------------------------------------------------------- 1


def test_criterion_1_oracle_suite(capsys):
    suite = load_suite()
    t0 = time.perf_counter()
    res = run_suite(suite, reference_factory, FaultProfile(), SUITE_REPEATS, seed=SEED, keep_transcripts=False)
    elapsed = time.perf_counter() - t0
    cells = res.report.cells
    shape_ok = len(suite) == 30 and all(
        sum(1 for t in suite if t.category == c and t.length_class == lc) == 5 for c in CATEGORIES for lc in LENGTH_CLASSES
    )
    all_100 = all(cells[(c, lc)].sr == 100.0 and cells[(c, lc)].cr == 100.0 for c in CATEGORIES for lc in LENGTH_CLASSES)
    ok = shape_ok and all_100 and res.report.total.episodes == 90 and elapsed < SUITE_RUNTIME_S
    report(1, ok, f"{res.report.total.episodes} episodes, SR {res.report.total.sr} / CR {res.report.total.cr} in every "
                  f"cell={all_100}, 5/5/5 split={shape_ok}, {elapsed:.2f}s (< {SUITE_RUNTIME_S:.0f}s)", capsys)
    assert ok


# ---------------------------------------------------------------- 2


def brute_force(qualifier, boxes):
    """Independent scan: set of indices achieving the optimum."""
    def key(b):
        x0, y0, x1, y1 = b
        if qualifier in ("largest", "smallest"):
            return (x1 - x0) * (y1 - y0)
        return x0 if qualifier == "leftmost" else x1

    best = None
    for b in boxes:
        k = key(b)
        if best is None or (k > best if qualifier in ("largest", "rightmost") else k < best):
            best = k
    return {i for i, b in enumerate(boxes) if key(b) == best}


def random_scene(rng, n):
    objs = []
    for i in range(n):
        w, h = rng.randint(1, 120), rng.randint(1, 120)
        x, y = rng.randint(0, 640 - w), rng.randint(0, 480 - h)
        objs.append(SceneObject(f"o{i}", "block", BBox(x, y, x + w, y + h), rng.uniform(100, 500)))
    if rng.random() < 0.2 and n >= 2:  # force some ties
        objs[1].bbox = BBox(objs[1].bbox.x_min, objs[1].bbox.y_min,
                            objs[1].bbox.x_min + objs[0].bbox.x_max - objs[0].bbox.x_min,
                            objs[1].bbox.y_min + objs[0].bbox.y_max - objs[0].bbox.y_min)
        if not objs[1].bbox.within(640, 480):
            objs[1].bbox = objs[0].bbox
    return Scene(640, 480, objs)


def test_criterion_2_qualifier_oracle(capsys):
    rng = random.Random(SEED)
    registry = default_registry()
    disagreements, checks = 0, 0
    for _ in range(QUALIFIER_SCENES):
        scene = random_scene(rng, rng.randint(*SCENE_OBJECTS))
        env = SimEnv(scene)
        out = env.detect_2d("block")
        boxes = list(out.result)
        mem = Memory().append_outcome(1, FunctionCall("2dDetect", {"target": "block"}), out)
        for q in ("largest", "smallest", "leftmost", "rightmost"):
            truth = brute_force(q, boxes)
            instruction = f"Pick up the {q} block."
            for i, b in enumerate(boxes):
                turn = ModelTurn(ReasoningTrace("", "g", "p"), FunctionCall("pick", {"target": "block", "bbox": b}))
                v = verify_parameters(turn, boxes, (640, 480), registry=registry, instruction=instruction, memory=mem)
                checks += 1
                disagreements += v.passed != (i in truth)
            goal = GoalProgram.from_list([{"verb": "pick", "object": {"label": "block", "qualifier": q}}])
            chosen = reference_next_turn(goal, mem.render_context()).call.args["bbox"]
            checks += 1
            disagreements += boxes.index(chosen) not in truth
    ok = disagreements == 0
    report(2, ok, f"{QUALIFIER_SCENES} scenes x 4 qualifiers, {checks} judgments, {disagreements} disagreements", capsys)
    assert ok


# ---------------------------------------------------------------- 3


def fault_episodes(suite):
    """First FAULT_EPISODES (task, repeat) pairs, cycling the suite."""
    jobs = []
    r = 0
    while len(jobs) < FAULT_EPISODES:
        for t in suite:
            jobs.append((t, r))
        r += 1
    return jobs[:FAULT_EPISODES]


def episode_setup(task, repeat):
    s = episode_seed(SEED, task.id, repeat)
    scene = jitter_scene(task.scene, random.Random(s))
    return scene, FaultProfile(P_DETECT_EMPTY, 0.0, s)


def naive_script(task, scene):
    """The clean-run turn sequence; replayed blindly it never reacts to feedback."""
    res, _ = run_task(task, ReferenceBackend(task.goal_program), scene=scene)
    return [s.outputs[-1] for s in res.steps]


def test_criterion_3_fault_recovery(capsys):
    suite = load_suite()
    registry = default_registry()
    jobs = fault_episodes(suite)
    ref_ok, ref_fail = 0, []
    naive_first_faulted, naive_first_faulted_ok = 0, 0
    for task, r in jobs:
        scene, faults = episode_setup(task, r)
        cfg = PlannerConfig(max_steps=2 * task.chain_length + 4, max_retries_per_step=FAULT_RETRIES)
        res, _ = run_task(task, ReferenceBackend(task.goal_program), faults=faults, config=cfg, scene=scene)
        if task_succeeded(res, task):
            ref_ok += 1
        else:
            # record how many detections came back empty vs the budget slack (L+3)
            empty = sum(1 for st in res.executed if st.turn.call.skill == "2dDetect" and not st.outcome.ok)
            ref_fail.append(f"{task.id}/r{r}:{res.termination},{empty} empty detections>slack {task.chain_length + 3}")

        naive_cfg = PlannerConfig(cfg.max_steps, cfg.max_retries_per_step, Verification(feedback=False))
        nres, _ = run_task(task, ScriptedBackend(naive_script(task, scene)), faults=faults, config=naive_cfg,
                           scene=scene, registry=registry)
        first = next(s for s in nres.steps if s.outcome is not None and s.turn.call.skill == "2dDetect")
        if not first.outcome.ok:
            naive_first_faulted += 1
            naive_first_faulted_ok += int(task_succeeded(nres, task))
    ref_sr = 100.0 * ref_ok / len(jobs)
    naive_sr = 100.0 * naive_first_faulted_ok / naive_first_faulted if naive_first_faulted else float("nan")
    ok = ref_sr == 100.0 and naive_first_faulted > 0 and naive_sr == 0.0
    report(3, ok, f"reference SR {ref_sr:.1f}% over {len(jobs)} episodes at p_detect_empty={P_DETECT_EMPTY} "
                  f"(failures: {', '.join(ref_fail) or 'none'}); naive backend without feedback level "
                  f"SR {naive_sr:.1f}% on {naive_first_faulted} first-detection-faulted episodes", capsys)
    assert ok


# ---------------------------------------------------------------- 4

VALID = (
    '<feedback>ok</feedback>\n<goal>pick</goal>\n<params>use [1,2,3,4]</params>\n'
    'call: pick(target="block", bbox=[1,2,3,4], boxes=[[0,0,1,1],[2,2,3,3]], n=-1.5e3)\n'
)


def fuzz_input(rng: random.Random) -> bytes:
    mode = rng.random()
    if mode < 0.4:
        return bytes(rng.getrandbits(8) for _ in range(rng.randint(0, 120)))
    data = bytearray(VALID.encode())
    for _ in range(rng.randint(1, 8)):
        op = rng.random()
        i = rng.randrange(len(data) + 1)
        if op < 0.4 and data:
            del data[min(i, len(data) - 1)]
        elif op < 0.8:
            data[i:i] = bytes([rng.choice(b'()[]<>/",=:\\\n call:0-9eE\xff\x00')])
        else:
            j = rng.randrange(len(data) + 1)
            data[i:i] = data[min(i, j):max(i, j)][:40]
    return bytes(data)


_ALPHABET = 'abcXYZ 09_-.,;:()[]<>/\\"\'\t\né漢 😀call'


def random_text(rng, lo, hi):
    return "".join(rng.choice(_ALPHABET) for _ in range(rng.randint(lo, hi)))


def random_section(rng, allow_empty):
    while True:
        s = random_text(rng, 0 if allow_empty else 1, 40).strip(" \t\r\n\f\v")
        bad = any(t in s for t in ("<feedback>", "</feedback>", "<goal>", "</goal>", "<params>", "</params>"))
        bad = bad or any(line.lstrip(" \t\r\n\f\v").startswith("call:") for line in s.split("\n"))
        if not bad and (allow_empty or s):
            return s


def random_value(rng):
    k = rng.randrange(5)
    box = lambda: BBox(*(rng.randint(-10**5, 10**5) for _ in range(4)))  # noqa: E731
    if k == 0:
        return random_text(rng, 0, 20)
    if k == 1:
        return rng.randint(-10**9, 10**9)
    if k == 2:
        return rng.choice([rng.uniform(-1e6, 1e6), rng.uniform(-1, 1) * 10 ** rng.randint(-300, 300), 0.0, -0.0])
    if k == 3:
        return box()
    return tuple(box() for _ in range(rng.randint(1, 4)))


def random_turn(rng):
    name = rng.choice(["", "2", "13"]) + rng.choice("abcXYZ") + "".join(rng.choice("ab_9Z") for _ in range(rng.randint(0, 8)))
    args = {}
    for _ in range(rng.randint(0, 4)):
        args[rng.choice("abtxyz") + "".join(rng.choice("a_1") for _ in range(rng.randint(0, 5)))] = random_value(rng)
    trace = ReasoningTrace(random_section(rng, True), random_section(rng, False), random_section(rng, False))
    return ModelTurn(trace, FunctionCall(name, args))


def test_criterion_4_parser_totality_and_roundtrip(capsys):
    rng = random.Random(SEED)
    crashes, parsed = [], 0
    for _ in range(FUZZ_INPUTS):
        data = fuzz_input(rng)
        try:
            parse_model_turn(data)
            parsed += 1
        except ParseError:
            pass
        except Exception as e:  # noqa: BLE001 - this is what we are counting
            crashes.append((data[:60], repr(e)))
    mismatches = 0
    for _ in range(ROUNDTRIP_TURNS):
        t = random_turn(rng)
        text = render_turn(t)
        back = parse_model_turn(text)
        same = back == t and render_turn(back) == text
        mismatches += not same
    ok = not crashes and mismatches == 0
    report(4, ok, f"{FUZZ_INPUTS} fuzz inputs, {len(crashes)} crashes ({parsed} parsed as turns); "
                  f"{ROUNDTRIP_TURNS} round trips, {mismatches} mismatches", capsys)
    assert ok, crashes[:3]


# ---------------------------------------------------------------- 5


GOALS_BY_LENGTH = {
    2: [{"verb": "pick", "object": {"label": "a"}}],
    3: [{"verb": "pick", "object": {"label": "a"}}, {"verb": "home"}],
    4: [{"verb": "pick", "object": {"label": "a"}, "destination": {"label": "b"}}],
    5: [{"verb": "pick", "object": {"label": "a"}, "destination": {"label": "b"}}, {"verb": "home"}],
    6: [{"verb": "push", "object": {"label": "c"}}, {"verb": "pick", "object": {"label": "a"}, "destination": {"label": "b"}}],
    7: [{"verb": "push", "object": {"label": "c"}}, {"verb": "pick", "object": {"label": "a"}, "destination": {"label": "b"}},
        {"verb": "home"}],
    8: [{"verb": "pick", "object": {"label": "a"}, "destination": {"label": "b"}},
        {"verb": "pick", "object": {"label": "c"}, "destination": {"label": "b"}}],
}


def synth_task(L):
    goal = GoalProgram.from_list(GOALS_BY_LENGTH[L])
    scene = Scene(640, 480, [])
    return TaskSpec(f"L{L}", goal.instruction(), goal, scene, goal.expected_chain(), "simple_mapping")


def synth_step(i, skill, ok):
    turn = ModelTurn(ReasoningTrace("", "g", "p"), FunctionCall(skill, {}))
    return StepRecord(i, turn=turn, outcome=SkillOutcome.success() if ok else SkillOutcome.failed("x"))


def synth_episode(task, k, recover):
    """k chain steps succeed, then chain[k] fails. With ``recover``, failed
    detections precede each successful detection."""
    steps = []
    for skill in task.expected_chain[:k]:
        if recover and skill == "2dDetect":
            steps.append(synth_step(len(steps) + 1, skill, False))
        steps.append(synth_step(len(steps) + 1, skill, True))
    if k < len(task.expected_chain):
        steps.append(synth_step(len(steps) + 1, task.expected_chain[k], False))
        return EpisodeResult(False, steps, "step_budget")
    steps.append(synth_step(len(steps) + 1, "taskDone", True))
    return EpisodeResult(True, steps, "terminal_skill")


def test_criterion_5_cr_arithmetic(capsys):
    bad, pairs = [], 0
    for L in CR_LENGTHS:
        task = synth_task(L)
        assert len(task.expected_chain) == L
        for k in range(0, L + 1):
            for recover in (False, True):
                pairs += 1
                got = compute_cr(synth_episode(task, k, recover), task)
                if got != k / L:
                    bad.append((L, k, recover, got))
    ok = not bad
    report(5, ok, f"{pairs} (k, L, recovery) cases for L in 2..8, k in 0..L; {len(bad)} with CR != k/L", capsys)
    assert ok, bad


# ---------------------------------------------------------------- 6


def gen_dataset(out_dir: Path):
    out = out_dir / "dataset.jsonl"
    code = cli_main(["gen-dataset", "--factor", str(DESK_FACTOR), "--seed", str(SEED), "--out", str(out)])
    return code, out, out.with_suffix(".tasks.json")


def test_criterion_6_dataset_identities(tmp_path, capsys):
    code, out, tasks_path = gen_dataset(tmp_path)
    seeds = load_seed_tasks()
    tasks = [TaskSpec.from_dict(t) for t in json.loads(tasks_path.read_text())["tasks"]]
    lines = read_chat_jsonl(out)

    # independent step count: rerun the reference planner per task
    executed = 0
    for t in tasks:
        res, _ = run_task(t, ReferenceBackend(t.goal_program), config=PlannerConfig(2 * t.chain_length + 4, 3))
        executed += len(res.executed)

    unparsed = 0
    for msgs in lines:
        try:
            parse_model_turn(msgs[-1]["content"])
        except ParseError:
            unparsed += 1

    rep = generate_samples(tasks)
    same_content = [m[-1]["content"] for m in lines] == [s.target_output for s in rep.samples]
    replay_fail = [t.id for t in tasks if not replay_task(t, [s for s in rep.samples if s.task_id == t.id])]

    ok = (code == 0 and len(seeds) == DESK_SEEDS and len(tasks) == DESK_TASKS and len(lines) == executed
          and unparsed == 0 and same_content and not replay_fail)
    report(6, ok, f"{len(seeds)} seeds x {DESK_FACTOR} -> {len(tasks)} tasks; {len(lines)} samples vs "
                  f"{executed} executed steps; {len(lines) - unparsed}/{len(lines)} re-parse; "
                  f"closed-loop replay failures: {len(replay_fail)}", capsys)
    assert ok


# ---------------------------------------------------------------- 7


def payload_split(context: str) -> tuple[int, int]:
    """(summary-line chars, perception-payload chars) of a compact context."""
    lines = context.split("\n")
    payload = sum(len(l) + 1 for l in lines if l.startswith("latest perception"))
    return len(context) + 1 - payload, payload


def memory_task(length):
    seed = next(s for s in load_seed_tasks() if s.chain_length == length)
    return augment([seed], rng_seed=SEED, factor=1)[0]


# Longest possible summary line in a fault-free episode: step number <= 99,
# label from the lexicon, bbox coordinates <= 4 digits, longest status text.
LONGEST_LABEL = max(len(w) for w in DEFAULT_LEXICON)
SUMMARY_LINE_BOUND = len(
    f'step 99: place(target="{"x" * LONGEST_LABEL}", bbox=[9999,9999,9999,9999]) -> success: detected 99 objects'
) + 1


def test_criterion_7_memory_bound(capsys):
    details, ok = [], True
    ratios = []
    for L in MEMORY_LENGTHS:
        task = memory_task(L)
        res, _ = run_task(task, ReferenceBackend(task.goal_program))
        assert res.success
        compact, full = Memory(), FullHistoryMemory()
        prev_summary = payload_split(compact.render_context())[0]
        max_payload = 0
        for step in res.executed:
            compact.append(step)
            full.append(step)
            summary, payload = payload_split(compact.render_context())
            growth = summary - prev_summary
            prev_summary = summary
            ok &= growth <= SUMMARY_LINE_BOUND
            max_payload = max(max_payload, payload)
            ok &= compact.render_context().count("[[") <= 1  # one retained payload at most
        c_len, f_len = len(compact.render_context()), len(full.render_context())
        bound = len("no history yet") + SUMMARY_LINE_BOUND * len(res.executed) + max_payload
        ok &= c_len <= bound
        ratios.append(f_len / c_len)
        details.append(f"L={L}: {len(res.executed)} steps, compact {c_len} <= {bound}, full {f_len}")
    # full-history size relative to compact must keep growing with episode length
    ok &= all(b > a for a, b in zip(ratios, ratios[1:]))
    report(7, ok, "; ".join(details) + f"; full/compact ratio {', '.join(f'{r:.2f}' for r in ratios)} "
                  f"(per-step bound {SUMMARY_LINE_BOUND} chars)", capsys)
    assert ok


# ---------------------------------------------------------------- 8


def test_criterion_8_determinism(tmp_path, capsys):
    suite = load_suite()
    reports, transcripts = [], []
    for i in range(2):
        res = run_suite(suite, reference_factory, FaultProfile(), SUITE_REPEATS, seed=SEED,
                        transcript_dir=tmp_path / f"tr{i}", keep_transcripts=False)
        reports.append(res.report.to_json().encode())
        transcripts.append({p.name: p.read_bytes() for p in sorted((tmp_path / f"tr{i}").glob("*.json"))})
    datasets = []
    for i in range(2):
        d = tmp_path / f"ds{i}"
        d.mkdir()
        code, out, tasks_path = gen_dataset(d)
        assert code == 0
        datasets.append((out.read_bytes(), tasks_path.read_bytes()))
    same_report = reports[0] == reports[1]
    same_tr = transcripts[0] == transcripts[1] and len(transcripts[0]) == 90
    same_ds = datasets[0] == datasets[1]
    ok = same_report and same_tr and same_ds
    report(8, ok, f"report identical={same_report}, 90 transcripts identical={same_tr}, "
                  f"dataset+tasks files identical={same_ds}", capsys)
    assert ok
