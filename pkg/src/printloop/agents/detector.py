"""Image-based defect detection."""

from __future__ import annotations

import logging
from typing import Sequence

from ..client import CameraImage
from ..llm import BlockParseError, ImagePart
from ..llm.blocks import parse_block, parse_kv, render_block, render_kv
from ..modes import FailureMode
from .context import AgentContext
from .prompts import DETECTOR_SYSTEM
from .types import Failure, FailureReport, Severity

log = logging.getLogger(__name__)

_RANK = {Severity.LOW: 0, Severity.MEDIUM: 1, Severity.HIGH: 2}


class DetectionError(RuntimeError):
    pass


def observation_block(image: CameraImage, layer: int) -> str | None:
    """Machine-readable observation from simulator image metadata, if present."""
    meta = image.metadata or {}
    sev = meta.get("severities")
    if not sev:
        return None
    return render_block("observation", [
        ("source", "simulator"),
        ("layer", meta.get("layer", layer)),
        ("segment", meta.get("segment", 0)),
        ("severity", render_kv({k: f"{float(v):.3f}" for k, v in sorted(sev.items())})),
    ])


def build_detection_text(layer: int, part_description: str, previous: FailureReport | None,
                         previous_fixes: Sequence[str], observation: str | None) -> str:
    parts = [f"Part: {part_description}", f"Checkpoint layer: {layer}"]
    if previous is not None:
        found = ", ".join(m.value for m in previous.modes) or "none"
        fixes = "; ".join(previous_fixes) or "none"
        parts.append(f"Previous checkpoint (layer {previous.layer_index}) reported: {found}. Changes made: {fixes}.")
        parts.append("The first two images are from the previous checkpoint, the last two are current.")
    else:
        parts.append("Images: top view, then front view.")
    if observation:
        parts.append(observation)
    return "\n".join(parts)


def parse_report(text: str, layer: int, lenient: bool = False) -> FailureReport:
    block = parse_block(text, "report", lenient=lenient)
    by_mode: dict[FailureMode, Failure] = {}
    for raw in block.getall("failure"):
        kv = parse_kv(raw)
        if "mode" not in kv:
            raise BlockParseError(f"failure entry without mode: {raw!r}")
        if kv["mode"].strip().lower().replace(" ", "_") == "layer_shift":
            continue  # deliberately outside the taxonomy
        try:
            mode = FailureMode.parse(kv["mode"])
            sev = Severity(kv.get("severity", "low").strip().lower())
        except ValueError as exc:
            raise BlockParseError(str(exc)) from exc
        f = Failure(mode, kv.get("evidence", ""), sev, kv.get("region") or None)
        if mode not in by_mode or _RANK[sev] > _RANK[by_mode[mode].severity]:
            by_mode[mode] = f
    flag = (block.get("no_failures") or "").strip().lower()
    if flag not in ("true", "false", ""):
        raise BlockParseError(f"no_failures must be true or false, got {flag!r}")
    failures = list(by_mode.values())
    if flag == "false" and not failures and not lenient:
        raise BlockParseError("report says failures exist but lists none")
    return FailureReport(layer, block.get("observations", ""), failures, not failures, block.get("quality", ""))


def detect(ctx: AgentContext, images_now: Sequence[CameraImage], images_prev: Sequence[CameraImage],
           layer: int, part_description: str, previous: FailureReport | None = None,
           previous_fixes: Sequence[str] = ()) -> FailureReport:
    """Ask the backend for a report; one retry on malformed output."""
    if not images_now:
        raise ValueError("at least one current image is required")
    if not part_description:
        raise ValueError("part_description must be non-empty")
    obs = observation_block(images_now[0], layer) if ctx.embed_observation else None
    text = build_detection_text(layer, part_description, previous, previous_fixes, obs)
    images = [ImagePart(i.data, f"image/{i.format}") for i in list(images_prev) + list(images_now)]
    resp = ctx.ask("detector", "failure_report", DETECTOR_SYSTEM, text, images)
    try:
        return parse_report(resp.text, layer)
    except (BlockParseError, ValueError) as first:
        try:
            return parse_report(resp.text, layer, lenient=True)
        except (BlockParseError, ValueError):
            pass
        retry = text + f"\n\nYour previous answer could not be parsed ({first}). Reply with one report block only."
        resp = ctx.ask("detector", "failure_report", DETECTOR_SYSTEM, retry, images)
        try:
            return parse_report(resp.text, layer, lenient=True)
        except (BlockParseError, ValueError) as second:
            raise DetectionError(f"unparseable detection output after retry: {second}") from second
