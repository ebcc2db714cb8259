"""Verify the changes made at this checkpoint, then resume the print."""

from __future__ import annotations

import logging
from typing import Any

from ..client import flatten_status
from .context import AgentContext
from .executor import PARAM_OBJECTS
from .types import CheckpointRecord

log = logging.getLogger(__name__)

LABELS = {
    "flow_factor": ("flow", "pct"),
    "speed_factor": ("speed", "pct"),
    "fan": ("fan", "pct"),
    "nozzle_temp": ("nozzle", "degC"),
    "bed_temp": ("bed", "degC"),
    "retraction.length": ("retraction length", "mm"),
    "retraction.speed": ("retraction speed", "mm/s"),
    "z_offset": ("z-offset", "mm"),
    "pressure_advance": ("pressure advance", "s"),
}


class HandoffError(RuntimeError):
    pass


def format_value(param: str, value: Any) -> str:
    if value is None:
        return "?"
    unit = LABELS.get(param, (param, ""))[1]
    if unit == "pct":
        return f"{round(value * 100)}%"
    if unit == "degC":
        return f"{round(value)} °C"
    if unit == "mm":
        return f"{value:.2f} mm" if param == "z_offset" else f"{value:.1f} mm"
    if unit == "mm/s":
        return f"{value:.0f} mm/s"
    return f"{value:.3f}"


def describe_change(param: str, old: Any, new: Any) -> str:
    label = LABELS.get(param, (param, ""))[0]
    return f"{label} {format_value(param, old)} → {format_value(param, new)}"


def _matches(expected: float, observed: Any) -> bool:
    try:
        return abs(float(observed) - float(expected)) <= 1e-6 * max(1.0, abs(float(expected)))
    except (TypeError, ValueError):
        return False


def _read(ctx: AgentContext, params: list[str]) -> dict[str, Any]:
    objects = sorted({PARAM_OBJECTS[p] for p in params if p in PARAM_OBJECTS})
    if not objects:
        return {}
    r = ctx.client.query_objects(objects)
    return flatten_status(r.body["status"]) if r.ok else {}


def handoff(ctx: AgentContext, record: CheckpointRecord) -> str:
    """Re-read every changed parameter, re-issue a mismatched command once, resume."""
    changes = record.parameter_changes()
    latest: dict[str, dict[str, Any]] = {}
    for c in changes:
        latest[c["param"]] = c
    observed = _read(ctx, list(latest))
    reissued: set[str] = set()
    for param, c in latest.items():
        ok = _matches(c["to"], observed.get(param))
        entry = {"param": param, "expected": c["to"], "observed": observed.get(param), "reissued": False,
                 "verified": ok}
        if not ok and c["command"] not in reissued:
            reissued.add(c["command"])
            r = ctx.client.run_gcode(c["command"])
            ctx.emit("handoff", "reissue", {"command": c["command"], "status": r.status.value})
            observed.update(_read(ctx, [param]))
            entry.update(reissued=True, observed=observed.get(param), verified=_matches(c["to"], observed.get(param)))
        elif not ok:
            entry["reissued"] = True
        record.verification.append(entry)
        ctx.emit("handoff", "verification", entry)

    if changes:
        first: dict[str, Any] = {}
        for c in changes:
            first.setdefault(c["param"], c["from"])
        commentary = "; ".join(describe_change(p, first[p], c["to"]) for p, c in latest.items())
        failed = [v["param"] for v in record.verification if not v["verified"]]
        if failed:
            commentary += f" (unverified: {', '.join(failed)})"
    else:
        commentary = "no action taken"
    if record.degraded:
        failed_modules = [m for m, s in record.module_status.items() if s.value == "failed"]
        commentary += f" [degraded: {', '.join(failed_modules)} failed]"
    record.commentary = commentary
    ctx.emit("handoff", "commentary", {"text": commentary})

    r = ctx.client.resume()
    ctx.emit("handoff", "resume", {"status": r.status.value, "warning": r.warning})
    if not r.ok:
        raise HandoffError(f"resume failed, print left paused: {r.summary()}")
    return commentary
