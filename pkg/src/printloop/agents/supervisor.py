"""Deterministic sequencing of the agent modules for one checkpoint."""

from __future__ import annotations

import logging
import time
from typing import Callable, Sequence

from ..client import CameraImage
from .context import AgentContext
from .detector import detect
from .executor import execute
from .handoff import HandoffError, handoff
from .planner import plan
from .types import RESUME, CheckpointRecord, ModuleStatus

log = logging.getLogger(__name__)

PIPELINE = ("info_planner", "info_executor", "solution_planner", "solution_executor")


class ModuleFailed(RuntimeError):
    pass


def supervise(record: CheckpointRecord) -> str:
    """Next module id for ``record``, or :data:`RESUME` once handoff has run."""
    s = record.module_status
    if s["handoff"] is not ModuleStatus.PENDING:
        return RESUME
    if s["detector"] is ModuleStatus.PENDING:
        return "detector"
    if any(s[m] is ModuleStatus.FAILED for m in ("detector",) + PIPELINE):
        record.degraded = True
        return "handoff"
    if record.report is None or record.report.no_failures:
        return "handoff"
    for m in PIPELINE:
        if s[m] is ModuleStatus.PENDING:
            return m
    return "handoff"


def expected_sequence(no_failures: bool, failed: str | None = None) -> list[str]:
    """The module order the contract allows, given the report and the first failing module."""
    if failed == "detector":
        return ["detector", "handoff"]
    if no_failures:
        return ["detector", "handoff"]
    seq = ["detector"]
    for m in PIPELINE:
        seq.append(m)
        if m == failed:
            break
    return seq + ["handoff"]


Handler = Callable[[CheckpointRecord], None]


class Supervisor:
    """Runs one checkpoint through detect, plan, execute and handoff.

    ``overrides`` replaces module bodies (used to inject failures in tests).
    """

    def __init__(self, ctx: AgentContext, overrides: dict[str, Handler] | None = None):
        self.ctx = ctx
        self.overrides = overrides or {}
        self._images_now: Sequence[CameraImage] = ()
        self._images_prev: Sequence[CameraImage] = ()

    def run_checkpoint(self, record: CheckpointRecord, images_now: Sequence[CameraImage],
                       images_prev: Sequence[CameraImage] = ()) -> CheckpointRecord:
        self._images_now, self._images_prev = images_now, images_prev
        t0 = time.perf_counter()
        llm0 = self.ctx.llm_latency_ms
        while True:
            nxt = supervise(record)
            if nxt == RESUME:
                break
            record.sequence.append(nxt)
            self.ctx.emit("supervisor", "dispatch", {"module": nxt})
            self._run(record, nxt)
        record.set_status("supervisor", ModuleStatus.DONE)
        record.latency_ms = (time.perf_counter() - t0) * 1000.0
        self.ctx.emit("supervisor", "checkpoint_done", {
            "sequence": record.sequence,
            "degraded": record.degraded,
            "latency_ms": round(record.latency_ms, 3),
            "llm_latency_ms": round(self.ctx.llm_latency_ms - llm0, 3),
        })
        return record

    def _run(self, record: CheckpointRecord, module: str) -> None:
        body = self.overrides.get(module) or getattr(self, f"_{module}")
        try:
            body(record)
        except HandoffError:
            record.set_status(module, ModuleStatus.FAILED)
            self.ctx.emit(module, "module_status", {"status": "failed"})
            raise
        except Exception as exc:
            log.warning("checkpoint %d: %s failed: %s", record.index, module, exc)
            record.errors[module] = f"{type(exc).__name__}: {exc}"
            record.set_status(module, ModuleStatus.FAILED)
            self.ctx.emit(module, "module_status", {"status": "failed", "error": record.errors[module]})
            return
        record.set_status(module, ModuleStatus.DONE)
        self.ctx.emit(module, "module_status", {"status": "done"})

    # -- module bodies -------------------------------------------------------------

    def _detector(self, record: CheckpointRecord) -> None:
        prev = self.ctx.state.previous
        fixes = [f"{c['param']} -> {c['to']}" for c in prev.parameter_changes()] if prev else []
        record.report = detect(self.ctx, self._images_now, self._images_prev, record.layer_index,
                               record.part_description, prev.report if prev else None, fixes)
        self.ctx.emit("detector", "report", record.report.to_dict())

    def _info_planner(self, record: CheckpointRecord) -> None:
        record.info_plan = plan(self.ctx, record, "information")
        self.ctx.emit("info_planner", "plan", record.info_plan.to_dict())

    def _info_executor(self, record: CheckpointRecord) -> None:
        trace = execute(self.ctx, record, record.info_plan, "info_executor")
        record.traces["information"] = trace
        self.ctx.emit("info_executor", "gathered", {"gathered_info": record.gathered_info, "outcome": trace.outcome})
        if trace.outcome != "completed":
            raise ModuleFailed(f"information executor {trace.outcome}")

    def _solution_planner(self, record: CheckpointRecord) -> None:
        record.solution_plan = plan(self.ctx, record, "solution")
        self.ctx.emit("solution_planner", "plan", record.solution_plan.to_dict())

    def _solution_executor(self, record: CheckpointRecord) -> None:
        trace = execute(self.ctx, record, record.solution_plan, "solution_executor")
        record.traces["solution"] = trace
        if trace.outcome != "completed":
            raise ModuleFailed(f"solution executor {trace.outcome}")

    def _handoff(self, record: CheckpointRecord) -> None:
        handoff(self.ctx, record)
