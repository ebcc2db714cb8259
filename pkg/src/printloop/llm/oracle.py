"""Deterministic rule-based backend standing in for the remote model.

The oracle reads the machine-readable blocks the agents embed in their
requests (``observation``, ``context``, ``step``, ``attempt``) and answers
in the same block grammar a remote model is asked to use.  Its rules are
the reference behavior for the closed-loop tests.
"""

from __future__ import annotations

import math

from ..gcode import ParameterChange, render_parameter_command
from ..modes import FailureMode
from .base import BaseBackend, ChatRequest, ChatResponse, Usage, text_tokens
from .blocks import find_blocks, parse_block, parse_kv, render_block, render_kv

REPORT_THRESHOLD = 0.3
FLOW_STEP = 0.05
FLOW_CAP = 1.10
SPEED_STEP = 0.25
SPEED_FLOOR = 0.75
Z_STEP = 0.05
RETRACT_LENGTH_STEP = 0.5
RETRACT_SPEED_STEP = 5.0
BED_STEP = 5.0
PA_STEP = 0.025
PA_CAP = 0.1
TPU_NOZZLE = 220.0

EXTRUSION = {FailureMode.UNDER_EXTRUSION, FailureMode.INCONSISTENT_EXTRUSION}
ADHESION = {FailureMode.BED_ADHESION, FailureMode.LAYER_SEPARATION}

# what to read before deciding on a fix, per failure mode
INFO_OBJECTS: dict[FailureMode, tuple[str, ...]] = {
    FailureMode.STRINGING_OOZING: ("firmware_retraction", "extruder", "fan"),
    FailureMode.UNDER_EXTRUSION: ("gcode_move", "extruder"),
    FailureMode.INCONSISTENT_EXTRUSION: ("gcode_move", "extruder"),
    FailureMode.OVER_EXTRUSION: ("gcode_move", "extruder"),
    FailureMode.LAYER_SEPARATION: ("gcode_move", "toolhead"),
    FailureMode.BED_ADHESION: ("gcode_move", "toolhead"),
    FailureMode.WARPING: ("heater_bed",),
    FailureMode.BLOBS_ZITS: ("extruder", "gcode_move"),
    FailureMode.ELEPHANT_FOOT: ("heater_bed", "gcode_move"),
    FailureMode.PRINT_CRACKS: ("fan", "extruder"),
    FailureMode.GHOSTING: ("toolhead", "gcode_move"),
    FailureMode.RINGING: ("toolhead", "gcode_move"),
}

# second choice when an object is absent on the printer
FALLBACK_OBJECTS = {
    "retraction": "firmware_retraction",
    "nozzle": "extruder",
    "hotend": "extruder",
    "extruder0": "extruder",
    "bed": "heater_bed",
    "heated_bed": "heater_bed",
    "part_fan": "fan",
    "fan_generic": "fan",
    "speed": "gcode_move",
    "flow": "gcode_move",
    "z_offset": "gcode_move",
    "position": "toolhead",
}

EVIDENCE = {
    FailureMode.UNDER_EXTRUSION: "gaps between adjacent lines and thin, see-through infill",
    FailureMode.OVER_EXTRUSION: "swollen lines and ridges between passes",
    FailureMode.INCONSISTENT_EXTRUSION: "line width varies along the toolpath",
    FailureMode.STRINGING_OOZING: "thin strands across travel moves outside the part",
    FailureMode.LAYER_SEPARATION: "visible seam between this layer and the one below",
    FailureMode.BED_ADHESION: "first layer lines not pressed into the bed, edges lifting",
    FailureMode.WARPING: "corners lifting away from the bed",
    FailureMode.BLOBS_ZITS: "small bumps at seams and move starts",
}


def severity_label(value: float) -> str:
    if value >= 0.7:
        return "high"
    if value >= 0.5:
        return "medium"
    return "low"


def _floats(kv: dict[str, str]) -> dict[str, float]:
    out = {}
    for k, v in kv.items():
        try:
            out[k] = float(v)
        except ValueError:
            continue
    return out


def _pct(x: float) -> int:
    return int(round(x * 100))


class OracleBackend(BaseBackend):
    name = "oracle"

    def _complete(self, request: ChatRequest, estimate: int) -> ChatResponse:
        handler = {
            "failure_report": self._detect,
            "reasoning_frame": self._frame,
            "action_plan": self._plan,
            "react_step": self._react,
        }.get(request.response_schema_hint)
        if handler is None:
            text = "The oracle backend only answers structured agent requests."
        else:
            text = handler(request)
        return ChatResponse(text, "stop", Usage(estimate, text_tokens(text)), latency_ms=0.0)

    # -- detection ----------------------------------------------------------------

    def _detect(self, request: ChatRequest) -> str:
        text = request.last_user_text
        obs = find_blocks(text, "observation")
        if not obs:
            return render_block("report", [
                ("layer", "unknown"),
                ("observations", "no machine-readable observation attached; nothing can be asserted"),
                ("no_failures", "true"),
                ("quality", "not assessed"),
            ])
        block = obs[-1]
        layer = block.get("layer", "0")
        sev = _floats(parse_kv(block.get("severity", "")))
        found = []
        for mode in FailureMode:
            v = sev.get(mode.value, 0.0)
            if v >= REPORT_THRESHOLD:
                found.append((mode, v))
        items: list[tuple[str, object]] = [("layer", layer)]
        if not found:
            items += [("observations", "lines are continuous and evenly spaced"), ("no_failures", "true"),
                      ("quality", "good")]
            return render_block("report", items)
        worst = max(v for _, v in found)
        items += [("observations", f"{len(found)} defect type(s) visible on this layer"), ("no_failures", "false")]
        for mode, v in found:
            items.append(("failure", render_kv({
                "mode": mode.value,
                "severity": severity_label(v),
                "evidence": EVIDENCE.get(mode, "visible defect"),
            })))
        items.append(("quality", f"{severity_label(worst)} severity defects present"))
        return render_block("report", items)

    # -- planning -----------------------------------------------------------------

    def _frame(self, request: ChatRequest) -> str:
        ctx = parse_block(request.last_user_text, "context")
        frame = ctx.get("frame", "diagnostic_questioning")
        modes = [parse_kv(f)["mode"] for f in ctx.getall("failure")]
        items: list[tuple[str, object]] = [
            ("frame", frame),
            ("focus", ", ".join(modes) if modes else "overall print quality"),
        ]
        for m in modes:
            items.append(("question", f"which process parameter most directly drives {m}?"))
        return render_block("frame", items)

    def _plan(self, request: ChatRequest) -> str:
        ctx = parse_block(request.last_user_text, "context")
        kind = ctx.get("kind", "information")
        modes = []
        for f in ctx.getall("failure"):
            try:
                modes.append(FailureMode.parse(parse_kv(f)["mode"]))
            except (KeyError, ValueError):
                continue
        steps = self.information_steps(modes) if kind == "information" else self.solution_steps(
            modes,
            _floats(parse_kv(ctx.get("gathered", ""))),
            _floats(parse_kv(ctx.get("nominal", ""))),
            (ctx.get("material") or "").upper(),
        )
        items: list[tuple[str, object]] = [("kind", kind), ("frame", ctx.get("frame", ""))]
        items += [("step", render_kv(s)) for s in steps]
        if not steps:
            items.append(("note", "no parameter change indicated"))
        return render_block("plan", items)

    @staticmethod
    def information_steps(modes: list[FailureMode]) -> list[dict[str, str]]:
        seen: list[str] = []
        for m in modes:
            for obj in INFO_OBJECTS.get(m, ()):
                if obj not in seen:
                    seen.append(obj)
        return [
            {"intent": "query", "target": obj, "goal": f"read {obj} settings", "expect": f"{obj} fields present"}
            for obj in seen
        ]

    @staticmethod
    def solution_steps(modes: list[FailureMode], g: dict[str, float], nominal: dict[str, float],
                       material: str) -> list[dict[str, str]]:
        steps: list[dict[str, str]] = []
        ms = set(modes)

        def add(change: ParameterChange, goal: str) -> None:
            for line in render_parameter_command(change):
                steps.append({"intent": "gcode", "target": line, "goal": goal, "expect": "ok"})

        if FailureMode.STRINGING_OOZING in ms and "retraction.length" in g and "retraction.speed" in g:
            add(ParameterChange("retraction", g["retraction.length"] + RETRACT_LENGTH_STEP,
                                g["retraction.speed"] + RETRACT_SPEED_STEP),
                "longer, faster retraction to stop strings")
        if ms & EXTRUSION:
            flow = g.get("flow_factor")
            if flow is not None and _pct(flow) < _pct(FLOW_CAP):
                new = min(max(_pct(flow), 100) + _pct(FLOW_STEP), _pct(FLOW_CAP))
                add(ParameterChange("flow_factor", new / 100), "more material per line")
            sf = g.get("speed_factor")
            base = g.get("print_speed")
            if sf is not None and base is not None and "print_speed" in nominal:
                if base * sf > nominal["print_speed"] and _pct(sf) > _pct(SPEED_FLOOR):
                    new = max(_pct(sf) - _pct(SPEED_STEP), _pct(SPEED_FLOOR))
                    add(ParameterChange("speed_factor", new / 100), "slow down so the melt keeps up")
        if FailureMode.OVER_EXTRUSION in ms and "flow_factor" in g:
            add(ParameterChange("flow_factor", max(_pct(g["flow_factor"]) - 5, 90) / 100), "less material per line")
        if FailureMode.BLOBS_ZITS in ms and "pressure_advance" in g and g["pressure_advance"] < PA_CAP:
            add(ParameterChange("pressure_advance", min(g["pressure_advance"] + PA_STEP, PA_CAP)),
                "sharper pressure control at move ends")
        if ms & ADHESION and "toolhead_z" in g and "gcode_z" in g:
            err = g["toolhead_z"] - g["gcode_z"]
            if abs(err) > 1e-6:
                add(ParameterChange("z_adjust", -math.copysign(Z_STEP, err)), "bring the nozzle back to layer height")
        if FailureMode.WARPING in ms and "bed_temp" in g:
            add(ParameterChange("bed_temp", g["bed_temp"] + BED_STEP), "warmer bed against lifting")
        if material == "TPU" and ms & ADHESION and round(g.get("nozzle_temp", 0.0)) != TPU_NOZZLE:
            add(ParameterChange("nozzle_temp", TPU_NOZZLE), "hotter TPU bonds better to the layer below")
        return steps

    # -- ReAct ------------------------------------------------------------------------

    def _react(self, request: ChatRequest) -> str:
        text = request.last_user_text
        step = parse_block(text, "step")
        intent = step.get("intent", "query")
        target = step.get("target", "")
        attempts = find_blocks(text, "attempt")
        if not attempts:
            thought = f"Goal: {step.get('goal', '')}. Start with the planned target."
            return render_block("react", [("thought", thought), ("action", f"{intent} {target}")])
        last = attempts[-1]
        tried = last.get("action", "").split(None, 1)
        tried_target = tried[1] if len(tried) > 1 else target
        outcome = last.get("outcome", "")
        if intent == "query" and outcome == "insufficient":
            alt = FALLBACK_OBJECTS.get(tried_target)
            tried_all = {a.get("action", "") for a in attempts}
            if alt and f"query {alt}" not in tried_all:
                thought = f"{tried_target} is not available; {alt} carries the same fields."
                return render_block("react", [("thought", thought), ("action", f"query {alt}")])
        thought = f"{tried_target} did not give a usable result ({outcome}); no alternative left."
        return render_block("react", [("thought", thought), ("action", f"abort {outcome or 'failed'}")])
