"""Deterministic virtual printer speaking the Moonraker-compatible subset."""

from __future__ import annotations

import json
import logging
import threading
import zlib
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from ..client import PrinterSnapshot, Retraction, TempPair, TransportError, TransportResponse
from ..gcode import (
    CheckpointPolicy,
    GcodeDocument,
    find_checkpoints,
    injected_mask,
    inject_checkpoints,
    parse_extended_args,
    parse_line,
    scan_moves,
    segment_layers,
)
from .model import DefectSeverities, Nominal, compute_severities
from .render import LayerRender, default_footprint, encode_png, rasterize_moves, render_front_view, render_layer_image

log = logging.getLogger(__name__)

PERTURBATION_KINDS = ("z_shift", "clog", "nozzle_temp_drift", "bed_temp_drift")


class SimError(RuntimeError):
    pass


class PrinterCommandError(SimError):
    pass


@dataclass
class JobCheckpoint:
    layer_index: int
    segment_index: int
    z: float
    footprint: np.ndarray


@dataclass
class Job:
    name: str
    checkpoints: list[JobCheckpoint]
    layer_height: float
    total_layers: int

    @classmethod
    def synthetic(cls, n_layers: int = 3, segments: int = 1, size: int = 64, layer_height: float = 0.35,
                  name: str = "synthetic") -> "Job":
        fp = default_footprint((size, size), margin=max(2, size // 8))
        cps = []
        for layer in range(n_layers):
            for s in range(segments):
                part = np.zeros_like(fp)
                rows = np.flatnonzero(fp.any(axis=1))
                chunk = np.array_split(rows, segments)[s]
                part[chunk] = fp[chunk]
                cps.append(JobCheckpoint(layer, s, round((layer + 1) * layer_height, 6), part))
        return cls(name, cps, layer_height, n_layers)

    @classmethod
    def from_document(cls, doc: GcodeDocument, policy: CheckpointPolicy, image_size: int = 256,
                      name: str = "job", extrusion_width: float = 0.8) -> "Job":
        """Build checkpoints from a document, injecting blocks if it has none."""
        if not find_checkpoints(doc, policy.capture_marker):
            doc = inject_checkpoints(segment_layers(doc, policy.k), policy)
        cps = find_checkpoints(doc, policy.capture_marker)
        skip = injected_mask(doc.lines)
        moves = [m for m in scan_moves(doc.lines, skip) if m.extruding]
        xs = [c for m in moves for c in (m.start[0], m.end[0])]
        ys = [c for m in moves for c in (m.start[1], m.end[1])]
        margin = 4.0
        x0, y0 = min(xs) - margin, min(ys) - margin
        span = max(max(xs) - x0, max(ys) - y0) + margin
        scale = image_size / span
        shape = (int(np.ceil((max(ys) + margin - y0) * scale)), int(np.ceil((max(xs) + margin - x0) * scale)))
        zs = {layer.layer_index: layer.z for layer in doc.layers}
        out = []
        start = 0
        for cp in cps:
            chunk = [m for m in moves if start <= m.index < cp.begin]
            start = cp.end
            fp = rasterize_moves(chunk, extrusion_width, (x0, y0), scale, shape)
            out.append(JobCheckpoint(cp.layer_index, cp.segment_index, zs.get(cp.layer_index, 0.0), fp))
        return cls(name, out, doc.layer_height or 0.0, len(doc.layers))


@dataclass
class Perturbation:
    layer: int
    kind: str
    magnitude: float
    applied: bool = False


@dataclass
class CheckpointEvent:
    index: int
    layer_index: int
    segment_index: int
    severities: DefectSeverities
    params: PrinterSnapshot
    z_error: float
    seed: int
    _render: LayerRender | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "layer_index": self.layer_index,
            "segment_index": self.segment_index,
            "severities": self.severities.as_dict(),
            "z_error": self.z_error,
            "seed": self.seed,
        }


@dataclass
class Faults:
    """Test hooks: silently dropped commands, flaky transport, dead cameras."""

    drop: dict[str, int] = field(default_factory=dict)
    transient_failures: int = 0
    unreachable: bool = False
    cameras_down: set[str] = field(default_factory=set)


class VirtualPrinter:
    """In-memory printer whose defects follow :func:`compute_severities`.

    With ``auto_advance`` the printer runs straight to the next checkpoint
    whenever it is resumed, which is how checkpointed jobs behave on a real
    machine (the injected pause stops it again).
    """

    def __init__(
        self,
        nominal: Nominal | None = None,
        initial: Mapping[str, float] | None = None,
        seed: int = 0,
        auto_advance: bool = True,
        hidden: Mapping[str, float] | None = None,
    ):
        self.nominal = nominal or Nominal()
        self.seed = seed
        self.auto_advance = auto_advance
        self.faults = Faults()
        self._lock = threading.RLock()
        n = self.nominal
        self.values: dict[str, float] = {
            "flow_factor": n.flow_factor,
            "speed_factor": 1.0,
            "print_speed": n.print_speed,
            "nozzle_temp": n.nozzle_temp,
            "bed_temp": n.bed_temp,
            "fan": 1.0,
            "z_offset": 0.0,
            "pressure_advance": 0.05,
            "retract_length": 2.0,
            "retract_speed": 40.0,
            "max_accel": 3000.0,
        }
        for k, v in (initial or {}).items():
            if k not in self.values:
                raise ValueError(f"unknown initial parameter {k!r}")
            self.values[k] = float(v)
        self.hidden = {"z_error": 0.0, "clog": 0.0, "nozzle_temp_drift": 0.0, "bed_temp_drift": 0.0}
        for k, v in (hidden or {}).items():
            if k not in self.hidden:
                raise ValueError(f"unknown hidden parameter {k!r}")
            self.hidden[k] = float(v)
        self.perturbations: list[Perturbation] = []
        self.job: Job | None = None
        self.cursor = 0
        self.state = "standby"
        self.paused = False
        self.shutdown = False
        self.events: list[CheckpointEvent] = []
        self.command_log: list[str] = []
        self.position = [0.0, 0.0, 0.0]

    # -- job control -----------------------------------------------------------

    def load_job(self, job: Job, start: bool = True) -> None:
        with self._lock:
            self.job = job
            self.cursor = 0
            self.events.clear()
            self.state = "printing" if start else "standby"
            self.paused = False
            if start and self.auto_advance and job.checkpoints:
                self.step_checkpoint()

    @property
    def done(self) -> bool:
        return self.state == "complete"

    @property
    def next_layer(self) -> int | None:
        if self.job is None or self.cursor >= len(self.job.checkpoints):
            return None
        return self.job.checkpoints[self.cursor].layer_index

    def inject_perturbation(self, layer: int, kind: str, magnitude: float) -> None:
        """Schedule a disturbance that bypasses the API (nothing is logged)."""
        if kind not in PERTURBATION_KINDS:
            raise ValueError(f"unknown perturbation kind {kind!r}")
        with self._lock:
            if self.events and layer <= self.events[-1].layer_index:
                raise SimError(f"layer {layer} has already been printed")
            self.perturbations.append(Perturbation(layer, kind, float(magnitude)))

    def commanded_snapshot(self) -> PrinterSnapshot:
        v = self.values
        return PrinterSnapshot(
            flow_factor=v["flow_factor"],
            speed_factor=v["speed_factor"],
            nozzle_temp=TempPair(v["nozzle_temp"], v["nozzle_temp"]),
            bed_temp=TempPair(v["bed_temp"], v["bed_temp"]),
            fan=v["fan"],
            z_offset=v["z_offset"],
            pressure_advance=v["pressure_advance"],
            retraction=Retraction(v["retract_length"], v["retract_speed"]),
            position=tuple(self.position),
            layer_index=self.events[-1].layer_index if self.events else 0,
            paused=self.paused,
            print_speed=v["print_speed"],
        )

    def effective_snapshot(self) -> PrinterSnapshot:
        snap = self.commanded_snapshot()
        snap.flow_factor = max(1e-6, snap.flow_factor * (1.0 - self.hidden["clog"]))
        t = snap.nozzle_temp.target + self.hidden["nozzle_temp_drift"]
        snap.nozzle_temp = TempPair(snap.nozzle_temp.target, t)
        b = snap.bed_temp.target + self.hidden["bed_temp_drift"]
        snap.bed_temp = TempPair(snap.bed_temp.target, b)
        return snap

    @property
    def z_error(self) -> float:
        return self.values["z_offset"] + self.hidden["z_error"]

    def step_checkpoint(self) -> CheckpointEvent:
        """Print up to the next checkpoint and pause there."""
        with self._lock:
            if self.job is None:
                raise SimError("no job loaded")
            if self.cursor >= len(self.job.checkpoints):
                raise SimError("job already complete")
            cp = self.job.checkpoints[self.cursor]
            for p in self.perturbations:
                if not p.applied and p.layer <= cp.layer_index:
                    key = "z_error" if p.kind == "z_shift" else p.kind
                    self.hidden[key] += p.magnitude
                    p.applied = True
            sev = compute_severities(self.effective_snapshot(), self.nominal, self.z_error,
                                     first_layer=cp.layer_index == 0)
            seed = zlib.crc32(f"{self.seed}:{self.cursor}".encode())
            self.position = [0.0, 0.0, cp.z]
            event = CheckpointEvent(self.cursor, cp.layer_index, cp.segment_index, sev,
                                    self.commanded_snapshot(), self.z_error, seed)
            self.events.append(event)
            self.cursor += 1
            self.state = "paused"
            self.paused = True
            event.params.paused = True
            event.params.layer_index = cp.layer_index
            return event

    def render(self, event: CheckpointEvent) -> LayerRender:
        if event._render is None:
            fp = self.job.checkpoints[event.index].footprint
            event._render = render_layer_image(event.severities, event.seed, fp)
            event._render.metadata.update(layer=event.layer_index, segment=event.segment_index,
                                          checkpoint=event.index)
        return event._render

    # -- commands --------------------------------------------------------------

    def pause(self) -> str:
        with self._lock:
            if self.state not in ("printing", "paused"):
                raise PrinterCommandError("Print is not active")
            self.paused = True
            self.state = "paused"
            return "ok"

    def resume(self) -> str:
        with self._lock:
            if not self.paused:
                return "ok"
            self.paused = False
            self.state = "printing"
            if self.auto_advance:
                if self.job is not None and self.cursor < len(self.job.checkpoints):
                    self.step_checkpoint()
                else:
                    self.state = "complete"
            return "ok"

    def run_gcode(self, script: str) -> str:
        with self._lock:
            for raw in script.splitlines():
                if raw.strip():
                    self._apply_line(raw)
            self.command_log.append(script)
            return "ok"

    def _apply_line(self, raw: str) -> None:
        try:
            line = parse_line(raw)
        except ValueError as exc:
            raise PrinterCommandError(str(exc)) from exc
        cmd = line.command
        if cmd is None:
            return
        if self.faults.drop.get(cmd, 0) > 0:
            self.faults.drop[cmd] -= 1
            log.debug("fault injection: dropping %s", raw)
            return
        p = line.params
        v = self.values
        args = parse_extended_args(line)

        def num(key: str) -> float:
            try:
                return float(args[key])
            except (KeyError, ValueError):
                raise PrinterCommandError(f"Error on '{raw.strip()}': missing or invalid {key}")

        if cmd == "M220":
            if p.get("S", 0) <= 0:
                raise PrinterCommandError("M220 requires S > 0")
            v["speed_factor"] = p["S"] / 100.0
        elif cmd == "M221":
            if p.get("S", 0) <= 0:
                raise PrinterCommandError("M221 requires S > 0")
            v["flow_factor"] = p["S"] / 100.0
        elif cmd in ("M104", "M109"):
            v["nozzle_temp"] = max(0.0, p.get("S", 0.0))
        elif cmd in ("M140", "M190"):
            v["bed_temp"] = max(0.0, p.get("S", 0.0))
        elif cmd == "M106":
            v["fan"] = min(1.0, max(0.0, p.get("S", 255.0) / 255.0))
        elif cmd == "M107":
            v["fan"] = 0.0
        elif cmd == "SET_PRESSURE_ADVANCE":
            v["pressure_advance"] = max(0.0, num("ADVANCE"))
        elif cmd == "SET_RETRACTION":
            if "RETRACT_LENGTH" in args:
                v["retract_length"] = max(0.0, num("RETRACT_LENGTH"))
            if "RETRACT_SPEED" in args:
                v["retract_speed"] = max(0.0, num("RETRACT_SPEED"))
        elif cmd == "SET_GCODE_OFFSET":
            if "Z_ADJUST" in args:
                v["z_offset"] = round(v["z_offset"] + num("Z_ADJUST"), 6)
            elif "Z" in args:
                v["z_offset"] = num("Z")
        elif cmd == "SET_VELOCITY_LIMIT":
            if "ACCEL" in args:
                v["max_accel"] = num("ACCEL")
        elif cmd == "PAUSE":
            self.pause()
        elif cmd == "RESUME":
            self.resume()
        elif cmd in ("M112", "FIRMWARE_RESTART", "RESTART", "M81", "M999", "SAVE_CONFIG", "M997"):
            self.shutdown = True
            self.state = "error"
        elif cmd in ("G0", "G1", "G4", "G90", "G91", "G92", "M82", "M83", "M117", "M118", "M400", "M114",
                     "M105", "GET_POSITION", "STATUS", "M84", "M18", "T0"):
            pass
        else:
            raise PrinterCommandError(f'Unknown command:"{cmd}"')

    # -- status ---------------------------------------------------------------

    def status(self) -> dict[str, dict[str, Any]]:
        with self._lock:
            v = self.values
            z_cmd = self.position[2]
            actual_nozzle = v["nozzle_temp"]
            layer = self.events[-1].layer_index if self.events else 0
            return {
                "gcode_move": {
                    "speed_factor": v["speed_factor"],
                    "extrude_factor": v["flow_factor"],
                    "speed": v["print_speed"],
                    "homing_origin": [0.0, 0.0, v["z_offset"], 0.0],
                    "position": [self.position[0], self.position[1], z_cmd + v["z_offset"], 0.0],
                    "gcode_position": [self.position[0], self.position[1], z_cmd, 0.0],
                    "absolute_coordinates": True,
                    "absolute_extrude": False,
                },
                "toolhead": {
                    "position": [self.position[0], self.position[1], round(z_cmd + self.z_error, 6), 0.0],
                    "homed_axes": "xyz",
                    "max_velocity": 300.0,
                    "max_accel": v["max_accel"],
                },
                "extruder": {
                    "temperature": actual_nozzle,
                    "target": v["nozzle_temp"],
                    "pressure_advance": v["pressure_advance"],
                    "smooth_time": 0.04,
                },
                "heater_bed": {"temperature": v["bed_temp"], "target": v["bed_temp"]},
                "fan": {"speed": v["fan"]},
                "firmware_retraction": {
                    "retract_length": v["retract_length"],
                    "retract_speed": v["retract_speed"],
                    "unretract_extra_length": 0.0,
                    "unretract_speed": v["retract_speed"],
                },
                "print_stats": {
                    "state": self.state,
                    "filename": self.job.name if self.job else "",
                    "info": {"current_layer": layer, "total_layer": self.job.total_layers if self.job else 0},
                },
                "pause_resume": {"is_paused": self.paused},
                "webhooks": {"state": "shutdown" if self.shutdown else "ready"},
                "virtual_sdcard": {
                    "is_active": self.state == "printing",
                    "progress": self.cursor / len(self.job.checkpoints) if self.job and self.job.checkpoints else 0.0,
                },
            }

    def snapshot_png(self, camera: str) -> bytes:
        with self._lock:
            if camera not in ("top", "front") or camera in self.faults.cameras_down:
                raise SimError(f"camera {camera} unavailable")
            if not self.events:
                blank = np.full((64, 64), 0.1)
                return encode_png(blank, metadata={"layer": None})
            event = self.events[-1]
            r = self.render(event)
            meta = dict(r.metadata)
            if camera == "top":
                return encode_png(r.gray, r.footprint, meta)
            per_layer: dict[int, float] = {}
            for e in self.events:
                per_layer[e.layer_index] = 1.0 - e.severities.gap_fraction
            front = render_front_view([per_layer[k] for k in sorted(per_layer)], width=r.gray.shape[1])
            return encode_png(front, metadata={"layer": event.layer_index, "segment": event.segment_index})

    # -- wire protocol ------------------------------------------------------------

    def handle(self, method: str, path: str, params: Mapping[str, str] | None = None,
               body: Mapping[str, Any] | None = None) -> TransportResponse:
        """Serve one Moonraker-style request."""
        params = params or {}
        try:
            result = self._route(method.upper(), path.rstrip("/") or "/", params, body or {})
        except PrinterCommandError as exc:
            return _json(400, {"error": {"code": 400, "message": str(exc)}})
        except SimError as exc:
            return _json(503, {"error": {"code": 503, "message": str(exc)}})
        if isinstance(result, TransportResponse):
            return result
        return _json(200, {"result": result})

    def _route(self, method, path, params, body):
        if path == "/server/info" and method == "GET":
            return {"klippy_connected": True, "klippy_state": "shutdown" if self.shutdown else "ready",
                    "moonraker_version": "printloop-sim"}
        if path == "/printer/objects/list" and method == "GET":
            return {"objects": sorted(self.status())}
        if path == "/printer/objects/query" and method == "GET":
            full = self.status()
            out = {}
            for name, fields in params.items():
                if name not in full:
                    continue
                wanted = [f for f in str(fields).split(",") if f]
                obj = full[name]
                out[name] = {k: obj[k] for k in wanted if k in obj} if wanted else obj
            return {"eventtime": float(len(self.events)), "status": out}
        if path == "/printer/gcode/script" and method == "POST":
            script = body.get("script") or params.get("script")
            if not script:
                raise PrinterCommandError("missing script")
            return self.run_gcode(script)
        if path == "/printer/print/pause" and method == "POST":
            return self.pause()
        if path == "/printer/print/resume" and method == "POST":
            return self.resume()
        if path == "/webcam/snapshot" and method == "GET":
            return TransportResponse(200, self.snapshot_png(params.get("camera", "top")), "image/png")
        if path in ("/printer/emergency_stop", "/printer/restart", "/printer/firmware_restart",
                    "/machine/shutdown", "/machine/reboot", "/server/restart") and method == "POST":
            self.shutdown = True
            self.state = "error"
            return "ok"
        return TransportResponse(404, json.dumps({"error": {"code": 404, "message": f"Not Found: {path}"}}).encode())

    # -- persistence -----------------------------------------------------------------

    def to_dict(self) -> dict:
        with self._lock:
            return {
                "values": dict(self.values),
                "hidden": dict(self.hidden),
                "perturbations": [vars(p).copy() for p in self.perturbations],
                "cursor": self.cursor,
                "state": self.state,
                "paused": self.paused,
                "position": list(self.position),
                "events": [e.to_dict() for e in self.events],
                "command_log": list(self.command_log),
            }

    def restore(self, data: Mapping[str, Any]) -> None:
        """Restore mutable state saved by :meth:`to_dict` onto a printer with the same job."""
        with self._lock:
            self.values = dict(data["values"])
            self.hidden = dict(data["hidden"])
            self.perturbations = [Perturbation(**p) for p in data["perturbations"]]
            self.cursor = data["cursor"]
            self.state = data["state"]
            self.paused = data["paused"]
            self.position = list(data["position"])
            self.command_log = list(data["command_log"])
            self.events = []
            for e in data["events"]:
                snap = self.commanded_snapshot()
                self.events.append(CheckpointEvent(e["index"], e["layer_index"], e["segment_index"],
                                                   DefectSeverities.from_dict(e["severities"]), snap,
                                                   e["z_error"], e["seed"]))


def _json(code: int, payload: Any) -> TransportResponse:
    return TransportResponse(code, json.dumps(payload).encode("utf-8"), "application/json")


class SimTransport:
    """In-process transport: requests go straight to :meth:`VirtualPrinter.handle`."""

    def __init__(self, printer: VirtualPrinter):
        self.printer = printer

    def request(self, method, path, params=None, body=None):
        faults = self.printer.faults
        if faults.unreachable:
            raise TransportError("connection refused (simulated)")
        if faults.transient_failures > 0:
            faults.transient_failures -= 1
            raise TransportError("connection reset (simulated)")
        return self.printer.handle(method, path, params, body)
