"""ReAct executor: thought -> action -> observation over the printer API."""

from __future__ import annotations

import logging
from typing import Any

from ..client import ApiResult, flatten_status
from ..gcode import ParameterChange, parse_parameter_command
from ..llm import BlockParseError
from ..llm.blocks import parse_block, render_block
from .context import AgentContext
from .prompts import REACT_SYSTEM
from .types import ActionPlan, CheckpointRecord, ExecutedAction, ReActIteration, ReActTrace

log = logging.getLogger(__name__)

ACTIONS = ("query", "gcode", "call", "abort")

# flat parameter name -> printer object that reports it
PARAM_OBJECTS = {
    "flow_factor": "gcode_move",
    "speed_factor": "gcode_move",
    "z_offset": "gcode_move",
    "nozzle_temp": "extruder",
    "pressure_advance": "extruder",
    "bed_temp": "heater_bed",
    "fan": "fan",
    "retraction.length": "firmware_retraction",
    "retraction.speed": "firmware_retraction",
}


def change_params(change: ParameterChange) -> list[str]:
    if change.param == "retraction":
        return ["retraction.length", "retraction.speed"]
    if change.param == "z_adjust":
        return ["z_offset"]
    return [change.param]


def change_records(change: ParameterChange, before: dict[str, Any]) -> list[dict[str, Any]]:
    """``[{param, from, to}]`` for one parameter command given current values."""
    if change.param == "retraction":
        return [
            {"param": "retraction.length", "from": before.get("retraction.length"), "to": change.value},
            {"param": "retraction.speed", "from": before.get("retraction.speed"), "to": change.speed},
        ]
    if change.param == "z_adjust":
        z = before.get("z_offset")
        return [{"param": "z_offset", "from": z, "to": None if z is None else round(z + change.value, 6)}]
    return [{"param": change.param, "from": before.get(change.param), "to": change.value}]


def parse_action(text: str) -> tuple[str, str, str]:
    block = parse_block(text, "react", lenient=True)
    action = block.require("action").strip()
    kind, _, target = action.partition(" ")
    kind = kind.lower()
    if kind not in ACTIONS:
        raise BlockParseError(f"unknown action {kind!r}")
    return block.get("thought", ""), kind, target.strip()


def _read_params(ctx: AgentContext, params: list[str], known: dict[str, Any]) -> dict[str, Any]:
    missing = sorted({PARAM_OBJECTS[p] for p in params if p not in known and p in PARAM_OBJECTS})
    if missing:
        r = ctx.client.query_objects(missing)
        if r.ok:
            known.update(flatten_status(r.body["status"]))
    return known


class Executor:
    def __init__(self, ctx: AgentContext, record: CheckpointRecord, module: str):
        self.ctx = ctx
        self.record = record
        self.module = module
        self.current = dict(record.gathered_params())

    def run(self, plan: ActionPlan) -> ReActTrace:
        ctx = self.ctx
        trace = ReActTrace()
        for step in plan.steps:
            attempts: list[dict[str, str]] = []
            while True:
                if len(trace.iterations) >= ctx.max_react_iters:
                    trace.outcome = "exhausted"
                    return trace
                text = render_block("step", [("intent", step.intent), ("target", step.target),
                                             ("goal", step.goal), ("expect", step.expected_observation)])
                text += "".join("\n" + render_block("attempt", list(a.items())) for a in attempts)
                resp = ctx.ask(self.module, "react_step", REACT_SYSTEM, text)
                try:
                    thought, kind, target = parse_action(resp.text)
                except BlockParseError as exc:
                    it = ReActIteration("(unparseable)", {"kind": "none", "target": ""}, f"invalid response: {exc}",
                                        "insufficient")
                    trace.iterations.append(it)
                    ctx.emit(self.module, "react_iteration", it.to_dict())
                    attempts.append({"action": "none", "outcome": "insufficient", "detail": "unparseable response"})
                    continue
                if kind == "abort":
                    it = ReActIteration(thought, {"kind": "abort", "target": target}, "executor gave up", "aborted")
                    trace.iterations.append(it)
                    ctx.emit(self.module, "react_iteration", it.to_dict())
                    trace.outcome = "aborted"
                    return trace
                result, ok, detail = self.act(kind, target)
                it = ReActIteration(thought, {"kind": kind, "target": target}, result.summary(),
                                    "sufficient" if ok else "insufficient")
                trace.iterations.append(it)
                ctx.emit(self.module, "react_iteration", it.to_dict())
                if ok:
                    break
                outcome = "denied" if result.status.value == "denied" else "insufficient"
                attempts.append({"action": f"{kind} {target}", "outcome": outcome, "detail": detail})
        return trace

    def act(self, kind: str, target: str) -> tuple[ApiResult, bool, str]:
        client = self.ctx.client
        if kind == "query":
            r = client.query_objects([target])
            if not r.ok:
                return r, False, r.summary()
            if target in r.body["absent"]:
                return r, False, f"object {target} absent on this printer"
            obj = r.body["status"][target]
            values = flatten_status({target: obj}) or dict(obj)
            self.record.gathered_info[target] = values
            self.current.update(values)
            return r, True, ""
        if kind == "gcode":
            changes = [c for c in (parse_parameter_command(line) for line in target.splitlines() if line.strip()) if c]
            records: list[dict[str, Any]] = []
            for c in changes:
                _read_params(self.ctx, change_params(c), self.current)
                records += change_records(c, self.current)
            r = client.run_gcode(target)
            action = ExecutedAction(target, r.status.value, r.summary(), records if r.ok else [])
            self.record.executed_actions.append(action)
            self.ctx.emit(self.module, "action", action.to_dict())
            if not r.ok:
                return r, False, r.summary()
            for rec in records:
                self.current[rec["param"]] = rec["to"]
                self.ctx.emit(self.module, "parameter_change", dict(rec, command=target))
            return r, True, ""
        r = client.call(target)
        return r, r.ok, "" if r.ok else r.summary()


def execute(ctx: AgentContext, record: CheckpointRecord, plan: ActionPlan, module: str) -> ReActTrace:
    return Executor(ctx, record, module).run(plan)
