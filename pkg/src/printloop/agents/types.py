"""Data carried between agent modules: reports, plans, traces and the state dictionary."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any

from ..modes import FailureMode

MODULES = (
    "detector",
    "supervisor",
    "info_planner",
    "info_executor",
    "solution_planner",
    "solution_executor",
    "handoff",
)
RESUME = "resume"


class Severity(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


class ModuleStatus(str, Enum):
    PENDING = "pending"
    DONE = "done"
    FAILED = "failed"


class ReportError(ValueError):
    pass


@dataclass
class Failure:
    mode: FailureMode
    evidence: str
    severity: Severity
    region_hint: str | None = None

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "evidence": self.evidence, "severity": self.severity.value,
                "region_hint": self.region_hint}

    @classmethod
    def from_dict(cls, d: dict) -> "Failure":
        return cls(FailureMode(d["mode"]), d["evidence"], Severity(d["severity"]), d.get("region_hint"))


@dataclass
class FailureReport:
    layer_index: int
    observations: str
    failures: list[Failure] = field(default_factory=list)
    no_failures: bool = True
    quality_note: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.no_failures != (not self.failures):
            raise ReportError("no_failures must be true exactly when the failure list is empty")
        modes = [f.mode for f in self.failures]
        if len(set(modes)) != len(modes):
            raise ReportError("failure modes must be unique within one report")

    @property
    def modes(self) -> list[FailureMode]:
        return [f.mode for f in self.failures]

    def to_dict(self) -> dict:
        return {"layer_index": self.layer_index, "observations": self.observations,
                "failures": [f.to_dict() for f in self.failures], "no_failures": self.no_failures,
                "quality_note": self.quality_note}

    @classmethod
    def from_dict(cls, d: dict) -> "FailureReport":
        return cls(d["layer_index"], d["observations"], [Failure.from_dict(f) for f in d["failures"]],
                   d["no_failures"], d.get("quality_note", ""))


@dataclass
class PlanStep:
    intent: str  # query | gcode | call
    target: str
    goal: str = ""
    expected_observation: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ActionPlan:
    kind: str  # information | solution
    steps: list[PlanStep]
    reasoning_frame: str

    def to_dict(self) -> dict:
        return {"kind": self.kind, "reasoning_frame": self.reasoning_frame, "steps": [s.to_dict() for s in self.steps]}

    @classmethod
    def from_dict(cls, d: dict) -> "ActionPlan":
        return cls(d["kind"], [PlanStep(**s) for s in d["steps"]], d["reasoning_frame"])


@dataclass
class ReActIteration:
    thought: str
    action: dict[str, str]  # {"kind": ..., "target": ...}
    observation: str
    status: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ReActTrace:
    iterations: list[ReActIteration] = field(default_factory=list)
    outcome: str = "completed"  # completed | exhausted | aborted

    def to_dict(self) -> dict:
        return {"outcome": self.outcome, "iterations": [i.to_dict() for i in self.iterations]}

    @classmethod
    def from_dict(cls, d: dict) -> "ReActTrace":
        return cls([ReActIteration(**i) for i in d["iterations"]], d["outcome"])


@dataclass
class ExecutedAction:
    command: str
    status: str
    detail: str = ""
    changes: list[dict[str, Any]] = field(default_factory=list)  # {param, from, to}

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CheckpointRecord:
    index: int
    layer_index: int
    segment_index: int = 0
    part_description: str = ""
    images: dict[str, list[str]] = field(default_factory=lambda: {"current": [], "previous": []})
    report: FailureReport | None = None
    info_plan: ActionPlan | None = None
    gathered_info: dict[str, dict[str, Any]] = field(default_factory=dict)
    solution_plan: ActionPlan | None = None
    executed_actions: list[ExecutedAction] = field(default_factory=list)
    traces: dict[str, ReActTrace] = field(default_factory=dict)
    module_status: dict[str, ModuleStatus] = field(default_factory=lambda: {m: ModuleStatus.PENDING for m in MODULES})
    sequence: list[str] = field(default_factory=list)
    errors: dict[str, str] = field(default_factory=dict)
    degraded: bool = False
    verification: list[dict[str, Any]] = field(default_factory=list)
    commentary: str = ""
    occupancy: float | None = None
    latency_ms: float = 0.0

    def set_status(self, module: str, status: ModuleStatus) -> None:
        if module not in self.module_status:
            raise KeyError(module)
        if self.module_status[module] is not ModuleStatus.PENDING:
            raise RuntimeError(f"{module} already wrote its status for checkpoint {self.index}")
        self.module_status[module] = status

    def gathered_params(self) -> dict[str, Any]:
        """Flat parameter view over everything the information executor read."""
        out: dict[str, Any] = {}
        for values in self.gathered_info.values():
            out.update(values)
        return out

    def parameter_changes(self) -> list[dict[str, Any]]:
        return [dict(c, command=a.command) for a in self.executed_actions if a.status == "ok" for c in a.changes]

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "layer_index": self.layer_index,
            "segment_index": self.segment_index,
            "part_description": self.part_description,
            "images": self.images,
            "report": self.report.to_dict() if self.report else None,
            "info_plan": self.info_plan.to_dict() if self.info_plan else None,
            "gathered_info": self.gathered_info,
            "solution_plan": self.solution_plan.to_dict() if self.solution_plan else None,
            "executed_actions": [a.to_dict() for a in self.executed_actions],
            "traces": {k: t.to_dict() for k, t in self.traces.items()},
            "module_status": {k: v.value for k, v in self.module_status.items()},
            "sequence": self.sequence,
            "errors": self.errors,
            "degraded": self.degraded,
            "verification": self.verification,
            "commentary": self.commentary,
            "occupancy": self.occupancy,
            "latency_ms": self.latency_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CheckpointRecord":
        return cls(
            index=d["index"],
            layer_index=d["layer_index"],
            segment_index=d.get("segment_index", 0),
            part_description=d.get("part_description", ""),
            images=d.get("images", {"current": [], "previous": []}),
            report=FailureReport.from_dict(d["report"]) if d.get("report") else None,
            info_plan=ActionPlan.from_dict(d["info_plan"]) if d.get("info_plan") else None,
            gathered_info=d.get("gathered_info", {}),
            solution_plan=ActionPlan.from_dict(d["solution_plan"]) if d.get("solution_plan") else None,
            executed_actions=[ExecutedAction(**a) for a in d.get("executed_actions", [])],
            traces={k: ReActTrace.from_dict(t) for k, t in d.get("traces", {}).items()},
            module_status={k: ModuleStatus(v) for k, v in d["module_status"].items()},
            sequence=list(d.get("sequence", [])),
            errors=dict(d.get("errors", {})),
            degraded=d.get("degraded", False),
            verification=list(d.get("verification", [])),
            commentary=d.get("commentary", ""),
            occupancy=d.get("occupancy"),
            latency_ms=d.get("latency_ms", 0.0),
        )


@dataclass
class StateDictionary:
    """Shared session state; checkpoints and history only ever grow."""

    session_id: str
    part_description: str
    material: str = "PLA"
    nominal: dict[str, float] = field(default_factory=dict)
    checkpoints: list[CheckpointRecord] = field(default_factory=list)
    history: list[dict[str, Any]] = field(default_factory=list)

    @property
    def current(self) -> CheckpointRecord:
        return self.checkpoints[-1]

    @property
    def previous(self) -> CheckpointRecord | None:
        return self.checkpoints[-2] if len(self.checkpoints) > 1 else None

    def new_checkpoint(self, layer_index: int, segment_index: int = 0) -> CheckpointRecord:
        rec = CheckpointRecord(len(self.checkpoints), layer_index, segment_index, self.part_description)
        self.checkpoints.append(rec)
        return rec

    def add_message(self, module: str, role: str, text: str) -> None:
        cp = self.checkpoints[-1].index if self.checkpoints else None
        self.history.append({"checkpoint": cp, "module": module, "role": role, "text": text})

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "part_description": self.part_description,
            "material": self.material,
            "nominal": self.nominal,
            "checkpoints": [c.to_dict() for c in self.checkpoints],
            "history": self.history,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StateDictionary":
        return cls(d["session_id"], d["part_description"], d.get("material", "PLA"), dict(d.get("nominal", {})),
                   [CheckpointRecord.from_dict(c) for c in d["checkpoints"]], list(d.get("history", [])))
