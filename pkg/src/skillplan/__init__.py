"""Small-model robot task planning with verified reasoning and compact memory."""

from __future__ import annotations

from .backend import GoalProgram, HTTPBackend, ReferenceBackend, ScriptedBackend
from .dataset import augment, export_chat_jsonl, generate_samples, load_seed_tasks
from .harness import MetricsReport, compute_cr, compute_sr, run_suite
from .memory import FullHistoryMemory, Memory
from .planner import EpisodeResult, PlannerConfig, Verification, run_episode
from .simenv import FaultProfile, Scene, SimEnv
from .skills import FunctionCall, SkillOutcome, SkillRegistry, default_registry
from .tasks import TaskSpec, categorize, load_suite
from .wire import ModelTurn, ParseError, ReasoningTrace, parse_model_turn, render_turn

__version__ = "0.1.0"

__all__ = [
    "EpisodeResult", "FaultProfile", "FullHistoryMemory", "FunctionCall", "GoalProgram",
    "HTTPBackend", "Memory", "MetricsReport", "ModelTurn", "ParseError", "PlannerConfig",
    "ReasoningTrace", "ReferenceBackend", "Scene", "ScriptedBackend", "SimEnv", "SkillOutcome",
    "SkillRegistry", "TaskSpec", "Verification", "augment", "categorize", "compute_cr",
    "compute_sr", "default_registry", "export_chat_jsonl", "generate_samples", "load_seed_tasks",
    "load_suite", "parse_model_turn", "render_turn", "run_episode", "run_suite",
]
