"""Agent pipeline: detector, supervisor, planners, ReAct executors and handoff."""

from .context import AgentContext
from .detector import DetectionError, detect, parse_report
from .executor import execute
from .handoff import HandoffError, handoff
from .planner import PlanRejected, plan
from .supervisor import Supervisor, expected_sequence, supervise
from .types import (
    MODULES,
    RESUME,
    ActionPlan,
    CheckpointRecord,
    ExecutedAction,
    Failure,
    FailureReport,
    ModuleStatus,
    PlanStep,
    ReActIteration,
    ReActTrace,
    Severity,
    StateDictionary,
)

__all__ = [
    "MODULES",
    "RESUME",
    "ActionPlan",
    "AgentContext",
    "CheckpointRecord",
    "DetectionError",
    "ExecutedAction",
    "Failure",
    "FailureReport",
    "HandoffError",
    "ModuleStatus",
    "PlanRejected",
    "PlanStep",
    "ReActIteration",
    "ReActTrace",
    "Severity",
    "StateDictionary",
    "Supervisor",
    "detect",
    "execute",
    "expected_sequence",
    "handoff",
    "parse_report",
    "plan",
    "supervise",
]
