"""Prompt texts and the reasoning-frame catalog.

These are re-authored to the functional contract of each module: role,
inputs, and the exact block grammar the answer must use.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..modes import FailureMode, MODES

MODE_LIST = ", ".join(m.value for m in MODES)

DETECTOR_SYSTEM = f"""You are a 3D printing expert inspecting an FDM print that has been paused after a layer.
You receive a top view and a front view of the current print state, and, when available,
the same views from the previous checkpoint together with what was already reported and fixed there.
Report only defects that are visible now. Do not repeat issues from the previous layer unless they are
still visible in the current images. Ignore layer shift.

Answer with exactly one block:
```report
layer: <layer index>
observations: <one or two sentences on what you see>
no_failures: <true|false>
failure: mode=<mode>; severity=<low|medium|high>; evidence=<what shows it>; region=<optional>
quality: <short overall assessment>
```
Repeat the failure line once per defect. Allowed modes: {MODE_LIST}."""

FRAME_SYSTEM = """You are the reasoning module of a planning agent for an FDM printer.
Adapt the given reasoning frame to the defects at hand so the next step can plan well.

Answer with exactly one block:
```frame
frame: <frame id>
focus: <defects being addressed>
question: <one guiding question per line>
```"""

PLAN_SYSTEM = """You are the planning agent of an FDM print-correction system.
For kind=information, plan read-only queries of printer objects needed to diagnose the defects.
For kind=solution, plan the parameter changes (one G-code command per step) that address the defects,
based on the gathered values. Never plan shutdown, restart, firmware or config-save operations.

Answer with exactly one block:
```plan
kind: <information|solution>
frame: <frame id>
step: intent=<query|gcode|call>; target=<object, G-code line, or endpoint id>; goal=<why>; expect=<expected observation>
```
One step line per action, in execution order. Available endpoints and objects:
{catalog}"""

REACT_SYSTEM = """You are an executor agent that carries out one plan step at a time on a printer API,
using thought, action and observation cycles. If an attempt did not give a usable result, choose an
alternative endpoint or object, or adjust the G-code script. Give up with abort when nothing is left.

Answer with exactly one block:
```react
thought: <reasoning>
action: <query OBJECT | gcode SCRIPT | call ENDPOINT_ID | abort REASON>
```"""


@dataclass(frozen=True)
class ReasoningFrame:
    id: str
    keywords: tuple[FailureMode, ...]
    text: str


FRAMES = (
    ReasoningFrame(
        "causal_chaining",
        (FailureMode.UNDER_EXTRUSION, FailureMode.OVER_EXTRUSION, FailureMode.INCONSISTENT_EXTRUSION,
         FailureMode.STRINGING_OOZING, FailureMode.BLOBS_ZITS),
        "Trace each visible defect back through the process: symptom, mechanism, controlling parameter, "
        "current value, direction of change.",
    ),
    ReasoningFrame(
        "parameter_effect_table",
        (FailureMode.LAYER_SEPARATION, FailureMode.BED_ADHESION, FailureMode.WARPING, FailureMode.ELEPHANT_FOOT),
        "List the parameters that act on each defect with the sign and rough size of their effect, then pick "
        "the smallest set of changes that covers every defect.",
    ),
    ReasoningFrame(
        "diagnostic_questioning",
        (FailureMode.PRINT_CRACKS, FailureMode.GHOSTING, FailureMode.RINGING),
        "Ask what is observed, where, and since which layer; separate mechanical from thermal and "
        "extrusion causes before touching any parameter.",
    ),
)


def select_frame(modes: list[FailureMode]) -> ReasoningFrame:
    """Catalog frame with most keyword hits; ties go to catalog order."""
    best, hits = FRAMES[-1], 0
    for frame in FRAMES:
        n = sum(1 for m in modes if m in frame.keywords)
        if n > hits:
            best, hits = frame, n
    return best
