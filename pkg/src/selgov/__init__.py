"""Governed agent-selection simulator.

A deterministic testbed for selection governance under reinforcement:
candidate pools are generated non-adaptively, scored by a learnable linear
policy, reduced through governed filters, and selected by a softmax policy
whose reward-driven updates are projected onto externally fixed constraint
sets. Ships baselines (static, scalar top-k, unconstrained) plus metrics and
an append-only audit log that makes every summary replayable.
"""

from .domain import (
    AgentProfile,
    AuditRecord,
    ClipEvent,
    ConstraintSpec,
    FailLoudAction,
    Mode,
    ReducerParams,
    Scenario,
    SelectionParams,
    TaskContext,
    validate_constraint_spec,
)
from .evaluator import Fixtures, ScenarioSpec, VariantSpec, load_fixtures
from .harness import RunConfig, SummaryRecord, run_episode, run_sweep
from .metrics import AuditLog

__all__ = [
    "AgentProfile",
    "AuditLog",
    "AuditRecord",
    "ClipEvent",
    "ConstraintSpec",
    "FailLoudAction",
    "Fixtures",
    "Mode",
    "ReducerParams",
    "RunConfig",
    "Scenario",
    "ScenarioSpec",
    "SelectionParams",
    "SummaryRecord",
    "TaskContext",
    "VariantSpec",
    "load_fixtures",
    "run_episode",
    "run_sweep",
    "validate_constraint_spec",
]
