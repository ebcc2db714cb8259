"""Session engine: runs the closed loop over checkpoints, logs every event, persists state."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .agents import AgentContext, HandoffError, StateDictionary, Supervisor
from .client import DEFAULT_CATALOG, CameraImage, EndpointCatalog, PrinterClient, flatten_status
from .llm import FixtureStore, OracleBackend, RecordingBackend, RemoteBackend, ReplayBackend
from .llm.base import DEFAULT_CONTEXT_BUDGET
from .metrics import occupancy
from .sim import SimTransport, VirtualPrinter, load_scenario
from .sim.render import decode_png

log = logging.getLogger(__name__)

PRINTER_KEY_ENV = "PRINTLOOP_PRINTER_KEY"
BACKENDS = ("oracle", "remote", "fixtures")


class SessionError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class SessionConfig:
    printer: str  # "sim:<scenario>" or http(s) base URL
    backend: str = "oracle"
    out_dir: Path = Path("out")
    part_description: str | None = None
    material: str | None = None
    nominal: dict[str, float] = field(default_factory=dict)
    seed: int | None = None
    max_checkpoints: int | None = None
    base_url: str | None = None
    model: str | None = None
    api_key_env: str = "PRINTLOOP_API_KEY"
    fixtures: str | None = None
    record: str | None = None
    printer_key_env: str = PRINTER_KEY_ENV
    max_react_iters: int = 8
    context_budget: int = DEFAULT_CONTEXT_BUDGET
    embed_observation: bool = True
    poll_interval: float = 1.0
    wait_timeout: float = 3600.0
    catalog: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        self.validate()

    @property
    def is_sim(self) -> bool:
        return self.printer.startswith("sim:")

    def validate(self) -> None:
        if not self.printer or not (self.is_sim or self.printer.startswith(("http://", "https://"))):
            raise ConfigError("printer must be exactly one target: 'sim:<scenario>' or an http(s) URL")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {', '.join(BACKENDS)}")
        if self.backend == "remote" and not (self.base_url and self.model):
            raise ConfigError("remote backend needs base_url and model")
        if self.backend == "fixtures" and not self.fixtures:
            raise ConfigError("fixtures backend needs a fixtures directory")
        if self.max_checkpoints is not None and self.max_checkpoints < 1:
            raise ConfigError("max_checkpoints must be >= 1")

    def identity(self) -> dict[str, Any]:
        return {"printer": self.printer, "backend": self.backend, "model": self.model, "seed": self.seed,
                "part": self.part_description, "material": self.material, "max_checkpoints": self.max_checkpoints}


def load_config(path: str | Path, **overrides: Any) -> SessionConfig:
    """Read a TOML config; ``overrides`` (non-None) win over file values."""
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    flat: dict[str, Any] = {}
    printer = data.get("printer", {})
    if "target" in printer:
        flat["printer"] = printer["target"]
    if "api_key_env" in printer:
        flat["printer_key_env"] = printer["api_key_env"]
    backend = data.get("backend", {})
    if "kind" in backend:
        flat["backend"] = backend["kind"]
    for k in ("base_url", "model", "api_key_env", "fixtures", "record"):
        if k in backend:
            flat[k] = backend[k]
    session = data.get("session", {})
    for k in ("part_description", "material", "out_dir", "seed", "max_checkpoints", "poll_interval",
              "wait_timeout", "embed_observation"):
        if k in session:
            flat[k] = session[k]
    agents = data.get("agents", {})
    for k in ("max_react_iters", "context_budget"):
        if k in agents:
            flat[k] = agents[k]
    if "nominal" in data:
        flat["nominal"] = dict(data["nominal"])
    if "catalog" in data:
        flat["catalog"] = dict(data["catalog"])
    flat.update({k: v for k, v in overrides.items() if v is not None})
    if "printer" not in flat:
        raise ConfigError("config names no printer target")
    return SessionConfig(**flat)


# ---------------------------------------------------------------------------
# event log


class EventLog:
    """JSON Lines: {ts, session, checkpoint, module, kind, payload}."""

    def __init__(self, path: Path, session_id: str):
        self.path = Path(path)
        self.session_id = session_id
        self.lines = 0
        self.checkpoint: int | None = None

    def reset(self, keep: int = 0) -> None:
        """Keep the first ``keep`` records, dropping anything after them."""
        kept: list[str] = []
        if keep and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for i, line in enumerate(fh):
                    if i >= keep:
                        break
                    kept.append(line)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", encoding="utf-8") as fh:
            fh.writelines(kept)
        self.lines = len(kept)

    def write(self, module: str, kind: str, payload: dict[str, Any]) -> None:
        rec = {
            "ts": datetime.now(timezone.utc).isoformat(timespec="milliseconds"),
            "session": self.session_id,
            "checkpoint": self.checkpoint,
            "module": module,
            "kind": kind,
            "payload": payload,
        }
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, sort_keys=True, default=str) + "\n")
        self.lines += 1


def strip_volatile(obj: Any) -> Any:
    """Drop timestamps and latency fields so two logs can be compared."""
    if isinstance(obj, dict):
        return {k: strip_volatile(v) for k, v in obj.items() if k != "ts" and "latency" not in k}
    if isinstance(obj, list):
        return [strip_volatile(v) for v in obj]
    return obj


def comparable_log(path: str | Path) -> list[Any]:
    with open(path, encoding="utf-8") as fh:
        return [strip_volatile(json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# session


@dataclass
class SessionResult:
    state: StateDictionary
    exit_code: int
    out_dir: Path
    warnings: list[str] = field(default_factory=list)
    report: dict[str, Any] = field(default_factory=dict)


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


class Session:
    def __init__(self, config: SessionConfig, client: PrinterClient | None = None, backend: Any = None,
                 printer: VirtualPrinter | None = None):
        self.config = config
        self.out = config.out_dir
        self.scenario = load_scenario(config.printer[4:]) if config.is_sim else None
        self.printer = printer
        catalog = EndpointCatalog.from_mapping(config.catalog) if config.catalog else DEFAULT_CATALOG
        if client is None:
            if config.is_sim:
                if self.printer is None:
                    self.printer = self.scenario.build_printer(seed=config.seed)
                client = PrinterClient(SimTransport(self.printer), catalog)
            else:
                client = PrinterClient.connect(config.printer, os.environ.get(config.printer_key_env),
                                               catalog=catalog)
        self.client = client
        self.backend = backend or self._make_backend()
        digest = hashlib.sha256(json.dumps(config.identity(), sort_keys=True).encode()).hexdigest()
        self.session_id = f"s-{digest[:12]}"
        self.log = EventLog(self.out / "session.jsonl", self.session_id)
        self._prev_images: list[CameraImage] = []

    def _make_backend(self):
        c = self.config
        if c.backend == "oracle":
            return OracleBackend()
        if c.backend == "fixtures":
            return ReplayBackend(c.fixtures)
        remote = RemoteBackend(c.base_url, c.model, api_key_env=c.api_key_env)
        return RecordingBackend(remote, FixtureStore(c.record)) if c.record else remote

    # -- state ---------------------------------------------------------------

    def _new_state(self) -> StateDictionary:
        sc = self.scenario
        part = self.config.part_description or (sc.part_description if sc else None)
        if not part:
            raise ConfigError("part_description is required")
        material = self.config.material or (sc.material if sc else "PLA")
        nominal = dict(self.config.nominal)
        if sc is not None and not nominal:
            n = sc.nominal
            nominal = {"print_speed": n.print_speed, "nozzle_temp": n.nozzle_temp, "bed_temp": n.bed_temp}
        return StateDictionary(self.session_id, part, material, nominal)

    def _save(self, state: StateDictionary) -> None:
        data = {
            "state": state.to_dict(),
            "log_lines": self.log.lines,
            "sim": self.printer.to_dict() if self.printer is not None else None,
        }
        _atomic_write(self.out / "state.json", json.dumps(data, sort_keys=True, default=str))

    def _load(self) -> StateDictionary | None:
        path = self.out / "state.json"
        if not path.exists():
            return None
        data = json.loads(path.read_text(encoding="utf-8"))
        state = StateDictionary.from_dict(data["state"])
        if state.session_id != self.session_id:
            raise SessionError(f"state in {path} belongs to session {state.session_id}, not {self.session_id}")
        self.log.reset(keep=data["log_lines"])
        if self.printer is not None and data.get("sim"):
            self.printer.restore(data["sim"])
        if state.checkpoints:
            self._prev_images = [self._load_image(p) for p in state.checkpoints[-1].images["current"]]
        return state

    def _load_image(self, rel: str) -> CameraImage:
        data = (self.out / rel).read_bytes()
        gray, _, meta = decode_png(data)
        return CameraImage(data, gray.shape[1], gray.shape[0], "png", meta)

    # -- loop ------------------------------------------------------------------

    def run(self, resume: bool = False, on_checkpoint: Callable[[int], None] | None = None) -> SessionResult:
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "images").mkdir(exist_ok=True)
        state = self._load() if resume else None
        if state is None:
            if resume:
                log.warning("no saved state in %s; starting a fresh session", self.out)
            self.log.reset()
            state = self._new_state()
            self.log.write("session", "session_start", {"config": self.config.identity(), "material": state.material,
                                                        "part_description": state.part_description,
                                                        "nominal": state.nominal})
        info = self.client.server_info()
        if not info.ok:
            self.log.write("session", "session_error", {"error": f"printer unreachable: {info.summary()}"})
            raise SessionError(f"printer unreachable: {info.summary()}")

        ctx = AgentContext(state, self.client, self.backend, emit=self.log.write,
                           max_react_iters=self.config.max_react_iters, context_budget=self.config.context_budget,
                           embed_observation=self.config.embed_observation)
        supervisor = Supervisor(ctx)
        while self.config.max_checkpoints is None or len(state.checkpoints) < self.config.max_checkpoints:
            if self._wait_for_checkpoint() != "checkpoint":
                break
            k = len(state.checkpoints)
            self.log.checkpoint = k
            try:
                self._checkpoint(state, supervisor)
            except HandoffError as exc:
                self.log.write("session", "session_error", {"error": str(exc)})
                self._save(state)
                raise SessionError(str(exc)) from exc
            self.log.checkpoint = None
            self._save(state)
            if on_checkpoint is not None:
                on_checkpoint(k)
        return self._finish(state)

    def _wait_for_checkpoint(self) -> str:
        deadline = time.monotonic() + self.config.wait_timeout
        while True:
            r = self.client.query_objects(["print_stats", "pause_resume"])
            if not r.ok:
                raise SessionError(f"cannot read print state: {r.summary()}")
            st = r.body["status"]
            paused = st.get("pause_resume", {}).get("is_paused", False)
            pstate = st.get("print_stats", {}).get("state", "")
            if paused:
                return "checkpoint"
            if pstate in ("complete", "standby", "cancelled", "error"):
                return "complete"
            if time.monotonic() > deadline:
                raise SessionError("timed out waiting for the next checkpoint")
            time.sleep(self.config.poll_interval)

    def _checkpoint(self, state: StateDictionary, supervisor: Supervisor) -> None:
        k = len(state.checkpoints)
        images: list[CameraImage] = []
        paths: list[str] = []
        for cam in ("top", "front"):
            r = self.client.capture_snapshot(cam)
            if r.ok:
                rel = f"images/cp{k:03d}_{cam}.{r.body.format}"
                (self.out / rel).write_bytes(r.body.data)
                images.append(r.body)
                paths.append(rel)
            else:
                self.log.write("session", "camera_error", {"camera": cam, "error": r.summary()})
        meta = images[0].metadata if images else {}
        layer = meta.get("layer")
        if layer is None:
            ps = self.client.query_objects(["print_stats"])
            layer = ((ps.body or {}).get("status", {}).get("print_stats", {}).get("info") or {}).get("current_layer") \
                if ps.ok else None
        rec = state.new_checkpoint(int(layer or 0), int(meta.get("segment", 0) or 0))
        rec.images = {"current": paths, "previous": state.previous.images["current"] if state.previous else []}
        if images and images[0].format == "png":
            gray, mask, _ = decode_png(images[0].data)
            rec.occupancy = round(occupancy(gray, mask if mask is not None and mask.any() else None), 6)
        self.log.write("session", "capture", {
            "layer_index": rec.layer_index, "segment_index": rec.segment_index, "images": paths,
            "previous_images": rec.images["previous"], "occupancy": rec.occupancy,
            "ground_truth_occupancy": meta.get("ground_truth_occupancy"),
        })
        supervisor.run_checkpoint(rec, images, self._prev_images)
        self._prev_images = images

    def _finish(self, state: StateDictionary) -> SessionResult:
        warnings = []
        degraded = [c.index for c in state.checkpoints if c.degraded]
        if degraded:
            warnings.append(f"{len(degraded)} degraded checkpoint(s): {degraded}")
        final = {}
        snap = self.client.query_objects(["gcode_move", "extruder", "heater_bed", "fan", "firmware_retraction"])
        if snap.ok:
            keep = ("flow_factor", "speed_factor", "print_speed", "z_offset", "nozzle_temp", "bed_temp", "fan",
                    "pressure_advance", "retraction.length", "retraction.speed")
            flat = flatten_status(snap.body["status"])
            final = {k: flat[k] for k in keep if k in flat}
        self.log.write("session", "session_end", {"checkpoints": len(state.checkpoints), "degraded": degraded,
                                                  "final_parameters": final})
        report = build_report(state, final)
        write_report(self.out, report)
        self._save(state)
        data = json.loads((self.out / "state.json").read_text(encoding="utf-8"))
        data["final_parameters"] = final
        _atomic_write(self.out / "state.json", json.dumps(data, sort_keys=True, default=str))
        return SessionResult(state, 0, self.out, warnings, report)


# ---------------------------------------------------------------------------
# traceability report


def build_report(state: StateDictionary, final_parameters: dict[str, Any]) -> dict[str, Any]:
    cps = []
    for c in state.checkpoints:
        cps.append({
            "checkpoint": c.index,
            "layer": c.layer_index,
            "segment": c.segment_index,
            "defects": [f.to_dict() for f in c.report.failures] if c.report else None,
            "actions": [{"command": a.command, "status": a.status} for a in c.executed_actions],
            "verification": c.verification,
            "commentary": c.commentary,
            "degraded": c.degraded,
            "errors": c.errors,
            "occupancy": c.occupancy,
            "latency_ms": round(c.latency_ms, 3),
        })
    return {
        "session": state.session_id,
        "part_description": state.part_description,
        "material": state.material,
        "checkpoints": cps,
        "occupancy_series": [[c.index, c.occupancy] for c in state.checkpoints if c.occupancy is not None],
        "final_parameters": final_parameters,
        "commands_issued": sum(len(c.executed_actions) for c in state.checkpoints),
        "degraded_checkpoints": [c.index for c in state.checkpoints if c.degraded],
    }


def render_markdown(report: dict[str, Any]) -> str:
    lines = [f"# Session {report['session']}", "", f"Part: {report['part_description']} ({report['material']})", ""]
    lines += ["| checkpoint | layer | segment | defects | commentary | occupancy | latency ms |",
              "|---|---|---|---|---|---|---|"]
    for c in report["checkpoints"]:
        defects = "n/a" if c["defects"] is None else (", ".join(f"{d['mode']} ({d['severity']})" for d in c["defects"])
                                                       or "none")
        occ = "" if c["occupancy"] is None else f"{c['occupancy']:.3f}"
        note = c["commentary"] + (" **degraded**" if c["degraded"] else "")
        lines.append(f"| {c['checkpoint']} | {c['layer']} | {c['segment']} | {defects} | {note} | {occ} | "
                     f"{c['latency_ms']:.1f} |")
    lines += ["", "## Final parameters", "", "| parameter | value |", "|---|---|"]
    for k, v in sorted(report["final_parameters"].items()):
        lines.append(f"| {k} | {v} |")
    lines += ["", f"Commands issued: {report['commands_issued']}",
              f"Degraded checkpoints: {report['degraded_checkpoints'] or 'none'}", ""]
    return "\n".join(lines)


def write_report(out_dir: Path, report: dict[str, Any]) -> None:
    _atomic_write(Path(out_dir) / "report.json", json.dumps(report, indent=1, sort_keys=True, default=str))
    _atomic_write(Path(out_dir) / "report.md", render_markdown(report))


def report_from_dir(out_dir: str | Path) -> dict[str, Any]:
    data = json.loads((Path(out_dir) / "state.json").read_text(encoding="utf-8"))
    return build_report(StateDictionary.from_dict(data["state"]), data.get("final_parameters", {}))
