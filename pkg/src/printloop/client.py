"""Client for a Moonraker-compatible printer-management HTTP API.

Every command and endpoint passes :meth:`PrinterClient.guard` before it
can reach the transport.  The policy is allow-by-default with an explicit
deny list of shutdown, restart, firmware and config-save operations.
"""

from __future__ import annotations

import io
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

import requests

from .gcode import parse_line

log = logging.getLogger(__name__)

__all__ = [
    "ApiStatus",
    "ApiResult",
    "Verdict",
    "Endpoint",
    "EndpointCatalog",
    "DEFAULT_CATALOG",
    "DENIED_COMMANDS",
    "TransportError",
    "TransportResponse",
    "Transport",
    "HttpTransport",
    "RecordingTransport",
    "TempPair",
    "Retraction",
    "PrinterSnapshot",
    "CameraImage",
    "PrinterClient",
    "flatten_status",
    "SNAPSHOT_OBJECTS",
]


class ApiStatus(str, Enum):
    OK = "ok"
    DENIED = "denied"
    TRANSPORT_ERROR = "transport-error"
    PRINTER_ERROR = "printer-error"


@dataclass
class ApiResult:
    status: ApiStatus
    body: Any = None
    latency_ms: float = 0.0
    warning: str | None = None
    attempts: int = 1

    @property
    def ok(self) -> bool:
        return self.status is ApiStatus.OK

    def summary(self, limit: int = 200) -> str:
        body = self.body
        if isinstance(body, CameraImage):
            body = f"<{body.format} {body.width}x{body.height}>"
        elif not isinstance(body, str):
            body = json.dumps(body, sort_keys=True, default=str)
        text = f"{self.status.value}: {body}"
        if self.warning:
            text += f" (warning: {self.warning})"
        return text if len(text) <= limit else text[: limit - 3] + "..."


@dataclass(frozen=True)
class Verdict:
    allowed: bool
    reason: str = ""

    def __bool__(self) -> bool:
        return self.allowed


@dataclass(frozen=True)
class Endpoint:
    id: str
    method: str
    path: str
    description: str


@dataclass
class EndpointCatalog:
    allowed: list[Endpoint]
    excluded: dict[str, str]
    objects: dict[str, str] = field(default_factory=dict)
    denied_commands: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        clash = {e.id for e in self.allowed} & set(self.excluded)
        if clash:
            raise ValueError(f"endpoints both allowed and excluded: {sorted(clash)}")

    def endpoint(self, endpoint_id: str) -> Endpoint | None:
        for e in self.allowed:
            if e.id == endpoint_id:
                return e
        return None

    def describe(self) -> str:
        """One line per allowed endpoint and queryable object, for prompts."""
        rows = [f"{e.id}: {e.method} {e.path} - {e.description}" for e in self.allowed]
        rows += [f"object {name}: {desc}" for name, desc in self.objects.items()]
        return "\n".join(rows)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "EndpointCatalog":
        """Build a catalog from config; missing sections fall back to defaults."""
        allowed = [Endpoint(**e) for e in data.get("allowed", [])] or list(DEFAULT_CATALOG.allowed)
        return cls(
            allowed=allowed,
            excluded=dict(data.get("excluded", DEFAULT_CATALOG.excluded)),
            objects=dict(data.get("objects", DEFAULT_CATALOG.objects)),
            denied_commands=dict(data.get("denied_commands", DEFAULT_CATALOG.denied_commands)),
        )


DENIED_COMMANDS = {
    "M112": "emergency stop (shutdown)",
    "M999": "restart after stop",
    "M80": "power supply control",
    "M81": "power off (shutdown)",
    "M500": "save settings to EEPROM",
    "M502": "factory reset",
    "M997": "firmware update",
    "FIRMWARE_RESTART": "firmware restart",
    "RESTART": "host restart",
    "SAVE_CONFIG": "writes printer.cfg and restarts",
    "CANCEL_PRINT": "aborts the job",
    "SDCARD_RESET_FILE": "unloads the job",
    "M84": "disables steppers mid-print",
    "M18": "disables steppers mid-print",
}

DEFAULT_CATALOG = EndpointCatalog(
    allowed=[
        Endpoint("printer.objects.query", "GET", "/printer/objects/query", "read printer object fields"),
        Endpoint("printer.objects.list", "GET", "/printer/objects/list", "list queryable objects"),
        Endpoint("printer.gcode.script", "POST", "/printer/gcode/script", "run a G-code script or macro"),
        Endpoint("printer.print.pause", "POST", "/printer/print/pause", "pause the active print"),
        Endpoint("printer.print.resume", "POST", "/printer/print/resume", "resume a paused print"),
        Endpoint("server.info", "GET", "/server/info", "host and klippy status"),
        Endpoint("webcam.snapshot", "GET", "/webcam/snapshot", "still image from the top or front camera"),
    ],
    excluded={
        "printer.emergency_stop": "shutdown",
        "printer.restart": "restart",
        "printer.firmware_restart": "restart",
        "printer.print.cancel": "aborts the job",
        "machine.shutdown": "shutdown",
        "machine.reboot": "restart",
        "machine.services.restart": "restart",
        "machine.services.stop": "shutdown",
        "server.restart": "restart",
        "machine.update.firmware": "permanent firmware modification",
        "machine.update.full": "permanent firmware modification",
        "server.config.write": "config save",
    },
    objects={
        "gcode_move": "speed_factor, extrude_factor (flow), speed, homing_origin (z offset), gcode_position",
        "toolhead": "position, homed_axes, max_velocity, max_accel",
        "extruder": "temperature, target, pressure_advance, smooth_time",
        "heater_bed": "temperature, target",
        "fan": "speed (0-1)",
        "firmware_retraction": "retract_length, retract_speed, unretract_extra_length, unretract_speed",
        "print_stats": "state, filename, info.current_layer, info.total_layer",
        "pause_resume": "is_paused",
        "webhooks": "state",
    },
    denied_commands=DENIED_COMMANDS,
)

SNAPSHOT_OBJECTS = (
    "gcode_move",
    "toolhead",
    "extruder",
    "heater_bed",
    "fan",
    "firmware_retraction",
    "print_stats",
    "pause_resume",
)

# ---------------------------------------------------------------------------
# transports


class TransportError(Exception):
    pass


@dataclass
class TransportResponse:
    status_code: int
    content: bytes
    content_type: str = "application/json"

    def json(self) -> Any:
        return json.loads(self.content.decode("utf-8"))


class Transport(Protocol):
    def request(self, method: str, path: str, params: Mapping[str, str] | None = None,
                body: Mapping[str, Any] | None = None) -> TransportResponse: ...


class HttpTransport:
    def __init__(self, base_url: str, api_key: str | None = None, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.session = requests.Session()
        if api_key:
            self.session.headers["X-Api-Key"] = api_key

    def request(self, method, path, params=None, body=None):
        url = self.base_url + path
        try:
            r = self.session.request(method, url, params=params, json=body, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        return TransportResponse(r.status_code, r.content, r.headers.get("Content-Type", ""))


class RecordingTransport:
    """Wraps a transport and records every request that reaches it."""

    def __init__(self, inner: Transport):
        self.inner = inner
        self.calls: list[tuple[str, str, dict | None, dict | None]] = []

    def request(self, method, path, params=None, body=None):
        self.calls.append((method, path, dict(params) if params else None, dict(body) if body else None))
        return self.inner.request(method, path, params, body)

    @property
    def scripts(self) -> list[str]:
        return [b["script"] for _, p, _, b in self.calls if p == "/printer/gcode/script" and b]


# ---------------------------------------------------------------------------
# snapshot view


@dataclass
class TempPair:
    target: float
    actual: float


@dataclass
class Retraction:
    length: float
    speed: float


@dataclass
class PrinterSnapshot:
    flow_factor: float = 1.0
    speed_factor: float = 1.0
    nozzle_temp: TempPair = field(default_factory=lambda: TempPair(0.0, 0.0))
    bed_temp: TempPair = field(default_factory=lambda: TempPair(0.0, 0.0))
    fan: float = 0.0
    z_offset: float = 0.0
    pressure_advance: float = 0.0
    retraction: Retraction = field(default_factory=lambda: Retraction(0.0, 0.0))
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    layer_index: int = 0
    paused: bool = False
    print_speed: float = 0.0

    def validate(self) -> None:
        if self.flow_factor <= 0 or self.speed_factor <= 0:
            raise ValueError("flow and speed factors must be positive")
        if min(self.nozzle_temp.target, self.nozzle_temp.actual, self.bed_temp.target, self.bed_temp.actual) < 0:
            raise ValueError("temperatures must be >= 0")
        if not 0.0 <= self.fan <= 1.0:
            raise ValueError("fan must be within [0, 1]")
        if self.retraction.length < 0:
            raise ValueError("retraction length must be >= 0")

    @classmethod
    def from_status(cls, status: Mapping[str, Mapping[str, Any]]) -> "PrinterSnapshot":
        gm = status.get("gcode_move", {})
        ex = status.get("extruder", {})
        bed = status.get("heater_bed", {})
        rt = status.get("firmware_retraction", {})
        th = status.get("toolhead", {})
        ps = status.get("print_stats", {})
        origin = gm.get("homing_origin", [0.0, 0.0, 0.0, 0.0])
        pos = th.get("position", [0.0, 0.0, 0.0, 0.0])
        return cls(
            flow_factor=float(gm.get("extrude_factor", 1.0)),
            speed_factor=float(gm.get("speed_factor", 1.0)),
            nozzle_temp=TempPair(float(ex.get("target", 0.0)), float(ex.get("temperature", 0.0))),
            bed_temp=TempPair(float(bed.get("target", 0.0)), float(bed.get("temperature", 0.0))),
            fan=float(status.get("fan", {}).get("speed", 0.0)),
            z_offset=float(origin[2]),
            pressure_advance=float(ex.get("pressure_advance", 0.0)),
            retraction=Retraction(float(rt.get("retract_length", 0.0)), float(rt.get("retract_speed", 0.0))),
            position=(float(pos[0]), float(pos[1]), float(pos[2])),
            layer_index=int((ps.get("info") or {}).get("current_layer") or 0),
            paused=bool(status.get("pause_resume", {}).get("is_paused", False)),
            print_speed=float(gm.get("speed", 0.0)),
        )


def flatten_status(status: Mapping[str, Mapping[str, Any]]) -> dict[str, Any]:
    """Flat parameter-name view of a query result, used as gathered info."""
    out: dict[str, Any] = {}
    gm = status.get("gcode_move")
    if gm is not None:
        if "extrude_factor" in gm:
            out["flow_factor"] = gm["extrude_factor"]
        if "speed_factor" in gm:
            out["speed_factor"] = gm["speed_factor"]
        if "speed" in gm:
            out["print_speed"] = gm["speed"]
        if "homing_origin" in gm:
            out["z_offset"] = gm["homing_origin"][2]
        if "gcode_position" in gm:
            out["gcode_z"] = gm["gcode_position"][2]
    th = status.get("toolhead")
    if th is not None and "position" in th:
        out["toolhead_z"] = th["position"][2]
    ex = status.get("extruder")
    if ex is not None:
        if "target" in ex:
            out["nozzle_temp"] = ex["target"]
        if "temperature" in ex:
            out["nozzle_temp_actual"] = ex["temperature"]
        if "pressure_advance" in ex:
            out["pressure_advance"] = ex["pressure_advance"]
    bed = status.get("heater_bed")
    if bed is not None:
        if "target" in bed:
            out["bed_temp"] = bed["target"]
        if "temperature" in bed:
            out["bed_temp_actual"] = bed["temperature"]
    fan = status.get("fan")
    if fan is not None and "speed" in fan:
        out["fan"] = fan["speed"]
    rt = status.get("firmware_retraction")
    if rt is not None:
        if "retract_length" in rt:
            out["retraction.length"] = rt["retract_length"]
        if "retract_speed" in rt:
            out["retraction.speed"] = rt["retract_speed"]
    ps = status.get("print_stats")
    if ps is not None:
        if "state" in ps:
            out["print_state"] = ps["state"]
        info = ps.get("info") or {}
        if info.get("current_layer") is not None:
            out["layer_index"] = info["current_layer"]
    pr = status.get("pause_resume")
    if pr is not None and "is_paused" in pr:
        out["paused"] = pr["is_paused"]
    return out


@dataclass
class CameraImage:
    data: bytes
    width: int
    height: int
    format: str
    metadata: dict[str, Any] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# client


class PrinterClient:
    """Typed, guarded access to one printer.

    Reads may run concurrently; ``run_gcode``, ``pause`` and ``resume`` go
    through a single FIFO command lane.
    """

    def __init__(
        self,
        transport: Transport,
        catalog: EndpointCatalog = DEFAULT_CATALOG,
        retries: int = 3,
        backoff: float = 0.25,
        max_image_edge: int = 1024,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.transport = transport
        self.catalog = catalog
        self.retries = retries
        self.backoff = backoff
        self.max_image_edge = max_image_edge
        self._sleep = sleep
        self._lane = threading.Lock()

    @classmethod
    def connect(cls, base_url: str, api_key: str | None = None, **kw) -> "PrinterClient":
        return cls(HttpTransport(base_url, api_key), **kw)

    # -- guard ---------------------------------------------------------------

    def guard(self, endpoint_or_command: str) -> Verdict:
        item = endpoint_or_command.strip()
        if not item:
            return Verdict(True)
        key = item.strip("/").replace("/", ".").lower()
        if key in self.catalog.excluded:
            return Verdict(False, f"endpoint {key} excluded: {self.catalog.excluded[key]}")
        if "\n" in item:
            for part in item.splitlines():
                verdict = self.guard(part)
                if not verdict:
                    return verdict
            return Verdict(True)
        try:
            line = parse_line(item)
        except ValueError as exc:
            return Verdict(False, f"unparseable command: {exc}")
        cmd = line.command
        if cmd is None:
            first = item.split()[0].upper() if item.split() else ""
            cmd = first
        if cmd in self.catalog.denied_commands:
            return Verdict(False, f"command {cmd} denied: {self.catalog.denied_commands[cmd]}")
        return Verdict(True)

    # -- plumbing ------------------------------------------------------------

    def _send(self, method: str, path: str, params=None, body=None, raw: bool = False) -> ApiResult:
        endpoint = path.strip("/").replace("/", ".")
        verdict = self.guard(endpoint)
        if not verdict:
            return ApiResult(ApiStatus.DENIED, verdict.reason)
        t0 = time.perf_counter()
        last_err = ""
        for attempt in range(1, self.retries + 1):
            try:
                resp = self.transport.request(method, path, params, body)
            except TransportError as exc:
                last_err = str(exc)
                log.warning("transport error on %s %s (attempt %d/%d): %s", method, path, attempt, self.retries, exc)
                if attempt < self.retries:
                    self._sleep(self.backoff * 2 ** (attempt - 1))
                continue
            latency = (time.perf_counter() - t0) * 1000
            if resp.status_code >= 400:
                try:
                    err = resp.json().get("error", {})
                    message = err.get("message", "") if isinstance(err, dict) else str(err)
                except (ValueError, AttributeError):
                    message = resp.content.decode("utf-8", "replace")
                return ApiResult(ApiStatus.PRINTER_ERROR, message or f"HTTP {resp.status_code}", latency, attempts=attempt)
            if raw:
                return ApiResult(ApiStatus.OK, resp, latency, attempts=attempt)
            try:
                payload = resp.json()
            except ValueError:
                return ApiResult(ApiStatus.PRINTER_ERROR, "malformed JSON response", latency, attempts=attempt)
            return ApiResult(ApiStatus.OK, payload.get("result") if isinstance(payload, dict) else payload,
                             latency, attempts=attempt)
        latency = (time.perf_counter() - t0) * 1000
        return ApiResult(ApiStatus.TRANSPORT_ERROR, {"error": last_err, "attempts": self.retries}, latency,
                         attempts=self.retries)

    # -- operations ------------------------------------------------------------

    def server_info(self) -> ApiResult:
        return self._send("GET", "/server/info")

    def list_objects(self) -> ApiResult:
        return self._send("GET", "/printer/objects/list")

    def query_objects(self, names: Iterable[str] | Mapping[str, Sequence[str] | None]) -> ApiResult:
        """Query printer objects; body is ``{"status": {...}, "absent": [...]}``."""
        if isinstance(names, Mapping):
            wanted = {k: (list(v) if v else None) for k, v in names.items()}
        else:
            wanted = {n: None for n in names}
        if not wanted:
            raise ValueError("names must be non-empty")
        for name in wanted:
            verdict = self.guard(name)
            if not verdict:
                return ApiResult(ApiStatus.DENIED, verdict.reason)
        params = {k: ",".join(v) if v else "" for k, v in wanted.items()}
        result = self._send("GET", "/printer/objects/query", params=params)
        if result.ok:
            status = (result.body or {}).get("status", {})
            result.body = {"status": status, "absent": [n for n in wanted if n not in status]}
        return result

    def snapshot(self) -> PrinterSnapshot:
        result = self.query_objects(SNAPSHOT_OBJECTS)
        if not result.ok:
            raise TransportError(f"snapshot query failed: {result.summary()}")
        return PrinterSnapshot.from_status(result.body["status"])

    def run_gcode(self, script: str) -> ApiResult:
        if not script or not script.strip():
            raise ValueError("script must be non-empty")
        verdict = self.guard(script)
        if not verdict:
            return ApiResult(ApiStatus.DENIED, verdict.reason)
        with self._lane:
            return self._send("POST", "/printer/gcode/script", body={"script": script})

    def pause(self) -> ApiResult:
        with self._lane:
            state = self._paused()
            if state is True:
                return ApiResult(ApiStatus.OK, "already paused")
            return self._send("POST", "/printer/print/pause")

    def resume(self) -> ApiResult:
        with self._lane:
            state = self._paused()
            if state is False:
                return ApiResult(ApiStatus.OK, "not paused", warning="resume requested while not paused")
            return self._send("POST", "/printer/print/resume")

    def _paused(self) -> bool | None:
        r = self._send("GET", "/printer/objects/query", params={"pause_resume": "is_paused"})
        if not r.ok:
            return None
        return bool((r.body or {}).get("status", {}).get("pause_resume", {}).get("is_paused", False))

    def capture_snapshot(self, camera: str = "top") -> ApiResult:
        if camera not in ("top", "front"):
            raise ValueError("camera must be 'top' or 'front'")
        result = self._send("GET", "/webcam/snapshot", params={"camera": camera}, raw=True)
        if result.status is ApiStatus.PRINTER_ERROR:
            # any refusal from the camera service means no image is available
            return ApiResult(ApiStatus.TRANSPORT_ERROR, f"camera {camera} unavailable: {result.body}",
                             result.latency_ms, attempts=result.attempts)
        if not result.ok:
            return result
        try:
            result.body = self._decode_image(result.body.content)
        except Exception as exc:  # undecodable payload means the camera is unusable
            return ApiResult(ApiStatus.TRANSPORT_ERROR, f"camera {camera} returned no image: {exc}", result.latency_ms)
        return result

    def call(self, endpoint_id: str, **params: Any) -> ApiResult:
        """Invoke a catalog endpoint by id (used by the executors)."""
        verdict = self.guard(endpoint_id)
        if not verdict:
            return ApiResult(ApiStatus.DENIED, verdict.reason)
        ep = self.catalog.endpoint(endpoint_id)
        if ep is None:
            return ApiResult(ApiStatus.DENIED, f"endpoint {endpoint_id} not in catalog")
        if endpoint_id == "printer.objects.query":
            return self.query_objects(params.get("objects") or list(SNAPSHOT_OBJECTS))
        if endpoint_id == "printer.gcode.script":
            return self.run_gcode(params["script"])
        if endpoint_id == "printer.print.pause":
            return self.pause()
        if endpoint_id == "printer.print.resume":
            return self.resume()
        if endpoint_id == "webcam.snapshot":
            return self.capture_snapshot(params.get("camera", "top"))
        if ep.method == "GET":
            return self._send("GET", ep.path, params={k: str(v) for k, v in params.items()} or None)
        return self._send("POST", ep.path, body=params or None)

    def _decode_image(self, data: bytes) -> CameraImage:
        from PIL import Image, PngImagePlugin

        img = Image.open(io.BytesIO(data))
        img.load()
        meta: dict[str, Any] = {}
        text = getattr(img, "text", {}) or {}
        if "printloop" in text:
            meta = json.loads(text["printloop"])
        fmt = (img.format or "PNG").lower()
        if max(img.size) > self.max_image_edge:
            img.thumbnail((self.max_image_edge, self.max_image_edge))
            info = PngImagePlugin.PngInfo()
            if "printloop" in text:
                info.add_text("printloop", text["printloop"])
            buf = io.BytesIO()
            img.save(buf, format="PNG", pnginfo=info)
            data, fmt = buf.getvalue(), "png"
        return CameraImage(data, img.size[0], img.size[1], fmt, meta)
