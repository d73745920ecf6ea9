"""Command line: run one task, evaluate a suite, build a dataset, replay a transcript.

Exit codes: 0 success, 1 task/suite failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from .backend import Backend, HTTPBackend, ReferenceBackend, ScriptedBackend
from .dataset import (
    AugmentRules,
    DatasetError,
    augment,
    export_chat_jsonl,
    generate_samples,
    load_seed_tasks,
    write_tasks,
)
from .harness import default_config, episode_to_transcript, replay_transcript, run_suite, run_task
from .planner import PlannerConfig
from .simenv import FaultProfile, SceneError
from .skills import SkillError, SkillRegistry, default_registry, registry_from_config
from .tasks import TaskError, TaskSpec, load_suite, load_tasks
from .wire import render_call

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("skillplan")


class ConfigError(Exception):
    pass


def load_config(path: str | None) -> dict[str, Any]:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}: {e.msg}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def build_registry(cfg: dict[str, Any]) -> SkillRegistry:
    if "skills" not in cfg:
        return default_registry()
    reg = registry_from_config(cfg["skills"])
    if reg.terminal is None:
        raise ConfigError("skill library has no terminal skill")
    return reg


def build_suite(cfg: dict[str, Any], override: str | None) -> list[TaskSpec]:
    if override:
        return load_suite(override)
    if "tasks" in cfg:
        return load_tasks(cfg["tasks"])
    return load_suite(cfg.get("suite"))


def backend_factory(kind: str, cfg: dict[str, Any], script: str | None = None):
    bcfg = dict(cfg.get("backend") or {})
    if kind == "reference":
        return lambda task: ReferenceBackend(task.goal_program)
    if kind == "scripted":
        path = script or bcfg.get("script")
        if not path:
            raise ConfigError("scripted backend needs --script or backend.script")
        turns = ScriptedBackend.from_file(path).script
        return lambda task: ScriptedBackend(turns)
    if kind == "http":
        if "base_url" not in bcfg or "model" not in bcfg:
            raise ConfigError("http backend needs backend.base_url and backend.model in the config")
        opts = {k: bcfg[k] for k in ("api_key_env", "timeout", "max_retries", "backoff_base") if k in bcfg}
        return lambda task: HTTPBackend(bcfg["base_url"], bcfg["model"], **opts)
    raise ConfigError(f"unknown backend {kind!r}")


def build_faults(text: str | None, cfg: dict[str, Any], seed: int) -> FaultProfile:
    if text:
        return FaultProfile.parse(text, seed)
    f = cfg.get("faults") or {}
    return FaultProfile(float(f.get("p_detect_empty", 0.0)), float(f.get("p_action_fail", 0.0)), seed)


def planner_config(cfg: dict[str, Any], task: TaskSpec | None, max_steps: int | None) -> PlannerConfig | None:
    if "planner" in cfg:
        pc = PlannerConfig.from_dict(cfg["planner"])
    elif task is not None:
        pc = default_config(task)
    else:
        pc = None
    if max_steps is not None:
        base = pc or PlannerConfig()
        pc = PlannerConfig(max_steps, base.max_retries_per_step, base.verification, base.strict_bbox_membership)
    return pc


# ---------------------------------------------------------------- commands


def cmd_run(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    registry = build_registry(cfg)
    suite = build_suite(cfg, args.suite)
    by_id = {t.id: t for t in suite}
    if args.task not in by_id:
        raise ConfigError(f"unknown task {args.task!r} (have {', '.join(sorted(by_id))})")
    task = by_id[args.task]
    kind = args.backend or (cfg.get("backend") or {}).get("kind", "reference")
    backend: Backend = backend_factory(kind, cfg, args.script)(task)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    faults = build_faults(args.faults, cfg, seed)
    config = planner_config(cfg, task, args.max_steps)
    result, scene = run_task(task, backend, faults=faults, config=config, registry=registry)

    for step in result.steps:
        call = render_call(step.turn.call) if step.turn else "(no parseable turn)"
        status = step.outcome.status if step.outcome else "rejected"
        extra = f"  [{len(step.rejections)} rejected]" if step.rejections else ""
        print(f"{step.index:>3}  {call}  -> {status}{extra}")
    print(f"termination: {result.termination}  success: {result.success}")
    if result.error:
        print(f"error: {result.error}")
    if args.transcript:
        tr = episode_to_transcript(task, scene, faults, config or default_config(task), kind, result, registry=registry)
        Path(args.transcript).write_text(json.dumps(tr, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK if result.success else EXIT_FAIL


def cmd_eval(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    registry = build_registry(cfg)
    suite = build_suite(cfg, args.suite)
    kind = args.backend or (cfg.get("backend") or {}).get("kind", "reference")
    factory = backend_factory(kind, cfg)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    faults = build_faults(args.faults, cfg, seed)
    repeats = args.repeats if args.repeats is not None else int(cfg.get("repeats", 3))
    out = Path(args.out) if args.out else None
    result = run_suite(
        suite,
        factory,
        faults,
        repeats,
        planner_config(cfg, None, args.max_steps),
        seed=seed,
        registry=registry,
        workers=args.workers or int(cfg.get("workers", 1)),
        transcript_dir=(out / "transcripts") if out and not args.no_transcripts else None,
        keep_transcripts=False,
    )
    table = result.report.to_table()
    print(table, end="")
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(result.report.to_json(), encoding="utf-8")
        (out / "report.txt").write_text(table, encoding="utf-8")
    return EXIT_OK if all(r.success for r in result.rows) else EXIT_FAIL


def cmd_gen_dataset(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    registry = build_registry(cfg)
    dcfg = cfg.get("dataset") or {}
    seeds = load_seed_tasks(args.seeds or dcfg.get("seeds"))
    rules = AugmentRules(**{k: (tuple(v) if k == "lexicon" else v) for k, v in (dcfg.get("rules") or {}).items()})
    factor = args.factor if args.factor is not None else int(dcfg.get("factor", 10))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    tasks = augment(seeds, rules, seed, factor)
    report = generate_samples(tasks, registry, workers=args.workers or 1)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n = export_chat_jsonl(report.samples, out)
    tasks_path = Path(args.tasks_out) if args.tasks_out else out.with_suffix(".tasks.json")
    write_tasks(tasks, tasks_path)
    print(f"{len(seeds)} seeds x {factor} -> {len(tasks)} tasks -> {n} samples -> {out}")
    for tid, why in report.aborted:
        print(f"aborted {tid}: {why}", file=sys.stderr)
    return EXIT_OK if report.ok else EXIT_FAIL


def cmd_replay(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    try:
        transcript = json.loads(Path(args.transcript).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot load transcript: {e}") from e
    try:
        result, mismatches = replay_transcript(transcript, build_registry(cfg))
    except KeyError as e:
        raise ConfigError(f"transcript is missing {e}") from e
    print(f"termination: {result.termination}  success: {result.success}")
    for m in mismatches:
        print("mismatch:", m)
    if mismatches:
        return EXIT_FAIL
    print("replay matches the transcript")
    return EXIT_OK


# ---------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skillplan", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON config (skills, suite/tasks, backend, faults, planner, dataset)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--suite", help="task suite JSON (default: bundled 30-task suite)")
        sp.add_argument("--backend", choices=("reference", "scripted", "http"))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--faults", help="p_detect_empty,p_action_fail  e.g. 0.5,0")
        sp.add_argument("--max-steps", type=int)

    r = sub.add_parser("run", help="run one task")
    common(r)
    r.add_argument("--task", required=True)
    r.add_argument("--script", help="JSONL script for the scripted backend")
    r.add_argument("--transcript", help="write the episode transcript here")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="evaluate a suite and report SR/CR")
    common(e)
    e.add_argument("--repeats", type=int)
    e.add_argument("--out", help="directory for report.json, report.txt and transcripts/")
    e.add_argument("--no-transcripts", action="store_true")
    e.add_argument("--workers", type=int)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gen-dataset", help="seeds -> augmented tasks -> chat JSONL")
    g.add_argument("--seeds", help="seed task file (default: bundled)")
    g.add_argument("--factor", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--tasks-out", help="where to write the augmented tasks (default: <out>.tasks.json)")
    g.add_argument("--workers", type=int)
    g.set_defaults(func=cmd_gen_dataset)

    rp = sub.add_parser("replay", help="re-execute a transcript with a scripted backend")
    rp.add_argument("transcript")
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (ConfigError, TaskError, SceneError, SkillError, DatasetError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, TypeError) as e:
        # bad values in config/flags (fault probabilities, planner budgets, ...)
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
