from __future__ import annotations

import json
import random

import pytest

from skillplan.backend import ReferenceBackend, ScriptedBackend
from skillplan.harness import (
    EpisodeRow,
    MetricsReport,
    chain_progress,
    compute_cr,
    compute_sr,
    episode_seed,
    replay_transcript,
    run_suite,
    run_task,
    task_succeeded,
)
from skillplan.planner import EpisodeResult, PlannerConfig, StepRecord
from skillplan.simenv import FaultProfile, jitter_scene
from skillplan.skills import FunctionCall, SkillOutcome
from skillplan.tasks import TaskError, TaskSpec, categorize, load_suite
from skillplan.wire import ModelTurn, ReasoningTrace


def step(i, skill, ok=True):
    turn = ModelTurn(ReasoningTrace("", "g", "p"), FunctionCall(skill, {}))
    return StepRecord(i, turn=turn, outcome=SkillOutcome.success() if ok else SkillOutcome.failed("no"))


def episode(*spec, success=False):
    return EpisodeResult(success, [step(i, s, ok) for i, (s, ok) in enumerate(spec, 1)],
                         "terminal_skill" if success else "step_budget")


@pytest.fixture(scope="module")
def suite():
    return load_suite()


def task_with_chain(suite, n):
    return next(t for t in suite if t.chain_length == n)


@pytest.mark.parametrize("n, cls", [(2, "short"), (3, "short"), (4, "short"), (5, "medium"), (6, "medium"),
                                    (7, "long"), (8, "long")])
def test_categorize(n, cls):
    assert categorize(n) == cls


@pytest.mark.parametrize("n", [0, 1, 9, 13])
def test_categorize_out_of_range(n):
    with pytest.raises(TaskError):
        categorize(n)


def test_bundled_suite_shape(suite):
    assert len(suite) == 30
    for cat in ("simple_mapping", "dynamic_reasoning"):
        classes = [t.length_class for t in suite if t.category == cat]
        assert {c: classes.count(c) for c in set(classes)} == {"short": 5, "medium": 5, "long": 5}


def test_sr():
    assert compute_sr([True, True, False]) == 66.7
    assert compute_sr([True] * 4) == 100.0
    assert compute_sr([False] * 5) == 0.0
    with pytest.raises(ValueError):
        compute_sr([])


def test_cr_examples(suite):
    t = task_with_chain(suite, 8)
    chain = t.expected_chain
    ep = episode(*[(s, True) for s in chain[:5]], (chain[5], False))
    assert compute_cr(ep, t) == 0.625
    assert compute_cr(episode((chain[0], False), ("pick", True)), t) == 0.0
    full = episode(*[(s, True) for s in chain], ("taskDone", True), success=True)
    assert compute_cr(full, t) == 1.0


def test_cr_ignores_perception_recovery(suite):
    t = task_with_chain(suite, 4)  # detect, pick, detect, place
    chain = t.expected_chain
    assert chain[0] == "2dDetect"
    ep = episode(("2dDetect", False), ("2dDetect", False), ("2dDetect", True), ("2dDetect", True), (chain[1], True))
    assert chain_progress(ep, t) == 2


def test_cr_divergence_stops(suite):
    t = task_with_chain(suite, 4)
    ep = episode(("2dDetect", True), ("push", True), (t.expected_chain[1], True))
    assert chain_progress(ep, t) == 1


def test_report_invariants():
    rows = [EpisodeRow("a", 0, "simple_mapping", "short", True, 1.0, "terminal_skill"),
            EpisodeRow("b", 0, "simple_mapping", "short", False, 0.5, "step_budget")]
    r = MetricsReport.build(rows, {"seed": 0})
    cell = r.cells[("simple_mapping", "short")]
    assert (cell.episodes, cell.sr, cell.cr) == (2, 50.0, 75.0)
    assert json.loads(r.to_json())["total"]["episodes"] == 2
    assert "simple_mapping" in r.to_table()


def test_run_suite_counts_and_cells(suite):
    res = run_suite(suite[:4], lambda t: ReferenceBackend(t.goal_program), repeats=3)
    assert len(res.rows) == 12 and len(res.transcripts) == 12
    assert res.report.total.sr == 100.0 and res.report.total.cr == 100.0


def test_run_suite_errors_are_failures(suite):
    res = run_suite(suite[:3], lambda t: ScriptedBackend([]), repeats=1)
    assert res.report.total.sr == 0.0
    assert {r.termination for r in res.rows} == {"backend_error"}


def test_run_suite_factory_crash_is_failure(suite):
    def boom(task):
        class B:
            name = "boom"

            def complete(self, request):
                raise ZeroDivisionError("x")
        return B()

    res = run_suite(suite[:2], boom)
    assert not any(r.success for r in res.rows)


def test_transcripts_replay_exactly(suite, tmp_path):
    run_suite(suite[10:16], lambda t: ReferenceBackend(t.goal_program), FaultProfile(0.3, 0.2),
                    repeats=2, seed=5, transcript_dir=tmp_path)
    files = sorted(tmp_path.glob("*.json"))
    assert len(files) == 12
    for f in files:
        tr = json.loads(f.read_text())
        result, mismatches = replay_transcript(tr)
        assert mismatches == [], f.name
        assert result.success == (tr["termination"] == "terminal_skill")
        # task success is stricter: a failed action breaks the chain even if recovered
        assert not tr["success"] or result.success


def test_episode_seed_stable():
    assert episode_seed(0, "sm01", 0) == episode_seed(0, "sm01", 0)
    assert episode_seed(0, "sm01", 0) != episode_seed(0, "sm01", 1)


def test_parallel_matches_serial(suite):
    f = lambda t: ReferenceBackend(t.goal_program)  # noqa: E731
    a = run_suite(suite, f, FaultProfile(0.3, 0.0), repeats=1, seed=2, keep_transcripts=False)
    b = run_suite(suite, f, FaultProfile(0.3, 0.0), repeats=1, seed=2, keep_transcripts=False, workers=4)
    assert a.report.to_json() == b.report.to_json()


def test_task_chain_mismatch_rejected(suite):
    d = suite[0].to_dict()
    d["expected_chain"] = ["2dDetect"]
    with pytest.raises(TaskError):
        TaskSpec.from_dict(d)


def test_reference_recovers_with_ample_budget(suite):
    # p_detect_empty = 0.5 with a generous step budget: every episode recovers
    cfg = lambda t: PlannerConfig(max_steps=4 * t.chain_length + 16, max_retries_per_step=3)  # noqa: E731
    rows = []
    for r in range(4):
        for t in suite:
            s = episode_seed(11, t.id, r)
            res, _ = run_task(t, ReferenceBackend(t.goal_program), faults=FaultProfile(0.5, 0.0, s),
                              config=cfg(t), scene=jitter_scene(t.scene, random.Random(s)))
            rows.append(task_succeeded(res, t))
    assert compute_sr(rows) == 100.0
