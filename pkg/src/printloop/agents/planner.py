"""Two-stage planner: refine a reasoning frame, then emit an action plan."""

from __future__ import annotations

import logging

from ..llm import BlockParseError
from ..llm.blocks import parse_block, parse_kv, render_block, render_kv
from .context import AgentContext
from .prompts import FRAME_SYSTEM, PLAN_SYSTEM, select_frame
from .types import ActionPlan, CheckpointRecord, PlanStep

log = logging.getLogger(__name__)

INTENTS = ("query", "gcode", "call")


class PlanRejected(RuntimeError):
    pass


def _fmt_value(v) -> str:
    return f"{v:.4g}" if isinstance(v, float) else str(v)


def context_block(kind: str, frame: str, record: CheckpointRecord, material: str, nominal: dict,
                  gathered: dict | None) -> str:
    items: list[tuple[str, object]] = [("kind", kind), ("frame", frame), ("layer", record.layer_index),
                                       ("material", material)]
    for f in record.report.failures:
        items.append(("failure", render_kv({"mode": f.mode.value, "severity": f.severity.value})))
    if nominal:
        items.append(("nominal", render_kv({k: _fmt_value(v) for k, v in sorted(nominal.items())})))
    if gathered is not None:
        scalars = {k: _fmt_value(v) for k, v in sorted(gathered.items()) if isinstance(v, (int, float, str, bool))}
        items.append(("gathered", render_kv(scalars) if scalars else "none (information step failed or empty)"))
    return render_block("context", items)


def parse_plan(text: str, kind: str, frame: str) -> ActionPlan:
    block = parse_block(text, "plan", lenient=True)
    steps = []
    for raw in block.getall("step"):
        kv = parse_kv(raw)
        intent = kv.get("intent", "").lower()
        target = kv.get("target", "")
        if intent not in INTENTS or not target:
            raise BlockParseError(f"bad plan step {raw!r}")
        steps.append(PlanStep(intent, target, kv.get("goal", ""), kv.get("expect", "")))
    return ActionPlan(kind, steps, block.get("frame") or frame)


def validate_plan(ctx: AgentContext, plan: ActionPlan) -> list[str]:
    problems = []
    allowed_ids = {e.id for e in ctx.client.catalog.allowed}
    for i, s in enumerate(plan.steps):
        if plan.kind == "information" and s.intent == "gcode":
            problems.append(f"step {i}: information plans are read-only")
            continue
        if s.intent == "call" and s.target not in allowed_ids:
            problems.append(f"step {i}: endpoint {s.target} is not in the allowed catalog")
            continue
        verdict = ctx.client.guard(s.target)
        if not verdict:
            problems.append(f"step {i}: {verdict.reason}")
    return problems


def plan(ctx: AgentContext, record: CheckpointRecord, kind: str) -> ActionPlan:
    """Build and validate an information or solution plan for ``record``."""
    if kind not in ("information", "solution"):
        raise ValueError(f"unknown plan kind {kind!r}")
    module = "info_planner" if kind == "information" else "solution_planner"
    state = ctx.state
    gathered = record.gathered_params() if kind == "solution" else None
    frame = select_frame(record.report.modes)

    # stage 1: adapt the catalog frame to this checkpoint
    ctx_text = context_block(kind, frame.id, record, state.material, state.nominal, gathered)
    resp = ctx.ask(module, "reasoning_frame", FRAME_SYSTEM, f"Frame {frame.id}: {frame.text}\n{ctx_text}")
    try:
        fb = parse_block(resp.text, "frame", lenient=True)
        questions = "\n".join(f"- {q}" for q in fb.getall("question"))
        refined = f"Reasoning frame {frame.id} (focus: {fb.get('focus', '')}): {frame.text}\n{questions}"
    except BlockParseError:
        log.info("frame refinement unparseable; using catalog text")
        refined = f"Reasoning frame {frame.id}: {frame.text}"

    # stage 2: the plan itself, with one regeneration on rejection
    system = PLAN_SYSTEM.format(catalog=ctx.client.catalog.describe())
    text = f"{refined}\n{ctx_text}"
    feedback = ""
    for attempt in range(2):
        resp = ctx.ask(module, "action_plan", system, text + feedback)
        try:
            p = parse_plan(resp.text, kind, frame.id)
        except BlockParseError as exc:
            problems = [str(exc)]
        else:
            problems = validate_plan(ctx, p)
            if not problems:
                return p
        ctx.emit(module, "plan_rejected", {"attempt": attempt, "problems": problems})
        feedback = "\n\nThe previous plan was rejected: " + "; ".join(problems) + ". Produce a corrected plan."
    raise PlanRejected("; ".join(problems))
