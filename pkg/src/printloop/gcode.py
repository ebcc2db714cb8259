"""G-code parsing, layer segmentation and checkpoint injection.

Documents are immutable: every transformation returns a new
:class:`GcodeDocument` and never rewrites an original line.  Injected
material is always wrapped in ``;<printloop:begin ID>`` / ``;<printloop:end ID>``
sentinel comments so :func:`strip_checkpoints` can undo it exactly.
"""

from __future__ import annotations

import hashlib
import math
import re
import uuid
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

__all__ = [
    "GcodeError",
    "GcodeParseError",
    "EmptyToolpathError",
    "PlacementError",
    "UnsupportedParameterError",
    "GcodeLine",
    "LayerSegment",
    "Checkpoint",
    "GcodeDocument",
    "PurgeTower",
    "CheckpointPolicy",
    "ParameterChange",
    "Move",
    "parse",
    "parse_line",
    "serialize",
    "scan_moves",
    "segment_layers",
    "inject_checkpoints",
    "strip_checkpoints",
    "strip_text",
    "find_checkpoints",
    "synthesize_purge_tower",
    "render_parameter_command",
    "parse_parameter_command",
    "parse_extended_args",
    "PARAMETERS",
]


class GcodeError(ValueError):
    pass


class GcodeParseError(GcodeError):
    def __init__(self, line_no: int, text: str, reason: str):
        self.line_no = line_no
        self.text = text
        super().__init__(f"line {line_no}: {reason}: {text.strip()!r}")


class EmptyToolpathError(GcodeError):
    def __init__(self, msg: str = "empty toolpath: no extrusion moves found"):
        super().__init__(msg)


class PlacementError(GcodeError):
    pass


class UnsupportedParameterError(GcodeError):
    pass


_CLASSIC_CMD = re.compile(r"\s*([GMT])\s*(\d+(?:\.\d+)?)", re.IGNORECASE)
_EXTENDED_CMD = re.compile(r"\s*([A-Za-z_][A-Za-z0-9_]*)")
_LINE_NUMBER = re.compile(r"\s*N\d+\s*", re.IGNORECASE)
_CHECKSUM = re.compile(r"\*\d+\s*$")
_WORD = re.compile(r"([A-Za-z])\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)")
_FLAG = re.compile(r"([A-Za-z])(?=\s|$)")
_EXT_ARG = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)=(\"[^\"]*\"|\S*)")

# Commands whose argument is free text rather than letter/number words.
_TEXT_COMMANDS = {"M23", "M28", "M29", "M30", "M32", "M117", "M118", "M540", "M550"}

_BEGIN_RE = re.compile(r"^;<printloop:begin ([0-9a-f-]{36})>")
_END_RE = re.compile(r"^;<printloop:end ([0-9a-f-]{36})( noeol)?>")
_LAYER_MARKER = re.compile(r"^\s*;\s*(LAYER:\s*-?\d+|LAYER_CHANGE)\b")
_LAYER_HEIGHT_COMMENT = re.compile(
    r"^\s*;\s*(?:Layer height:|layer_height\s*=|HEIGHT:)\s*([0-9]*\.?[0-9]+)", re.IGNORECASE
)
_NAMESPACE = uuid.UUID("5b0d9a52-7f7e-4c8e-9b61-2f3d3f6f0c11")


@dataclass(frozen=True)
class GcodeLine:
    raw_text: str
    command: str | None = None
    params: Mapping[str, float] = field(default_factory=dict)
    comment: str | None = None
    flags: frozenset[str] = frozenset()

    def serialize(self) -> str:
        return self.raw_text

    @property
    def code(self) -> str:
        """The line without comment, checksum or line terminator."""
        return _code_part(self.raw_text)


@dataclass(frozen=True)
class LayerSegment:
    layer_index: int
    z: float
    line_span: tuple[int, int]
    sub_segments: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class Checkpoint:
    """An injected checkpoint block located in a document."""

    layer_index: int
    segment_index: int
    begin: int
    end: int  # index one past the end sentinel
    block_id: str


@dataclass(frozen=True)
class GcodeDocument:
    lines: tuple[GcodeLine, ...]
    layers: tuple[LayerSegment, ...] = ()
    layer_height: float | None = None
    source_digest: str = ""
    segments_per_layer: int = 1

    def serialize(self) -> str:
        return serialize(self)

    def __len__(self) -> int:
        return len(self.lines)


@dataclass(frozen=True)
class PurgeTower:
    center: tuple[float, float] | None = None
    diameter: float = 20.0
    layer_height: float = 0.35
    extrusion_width: float = 0.4
    filament_diameter: float = 1.75
    feed_rate: float = 1800.0


@dataclass(frozen=True)
class CheckpointPolicy:
    """Where to pause; ``granularity`` is one of per-layer, per-segment, every-n-layers."""

    granularity: str = "per-layer"
    segments: int = 1
    every: int = 1
    park_position: tuple[float, float] = (0.0, 0.0)
    capture_marker: str = "CAPTURE_CHECKPOINT"
    pause_command: str = "PAUSE"
    purge_tower: PurgeTower | None = None
    travel_feed: float = 6000.0

    def __post_init__(self):
        if self.granularity not in ("per-layer", "per-segment", "every-n-layers"):
            raise ValueError(f"unknown checkpoint granularity {self.granularity!r}")
        if self.segments < 1 or self.every < 1:
            raise ValueError("segments and every must be >= 1")

    @property
    def k(self) -> int:
        return self.segments if self.granularity == "per-segment" else 1


def _code_part(raw: str) -> str:
    code = raw.rstrip("\r\n")
    if ";" in code:
        code = code.split(";", 1)[0]
    code = _CHECKSUM.sub("", code)
    return code.strip()


def parse_line(raw: str, line_no: int = 1) -> GcodeLine:
    """Tokenize one line; ``raw`` keeps its terminator if it had one."""
    body = raw.rstrip("\r\n")
    comment = None
    if ";" in body:
        body, comment = body.split(";", 1)
    body = _CHECKSUM.sub("", body)
    m = _LINE_NUMBER.match(body)
    if m:
        body = body[m.end():]
    if not body.strip():
        return GcodeLine(raw, None, {}, comment)

    m = _CLASSIC_CMD.match(body)
    if m:
        number = m.group(2)
        if "." in number:
            number = number.rstrip("0").rstrip(".")
        command = m.group(1).upper() + str(int(number) if "." not in number else number)
        rest = body[m.end():]
        if command in _TEXT_COMMANDS:
            return GcodeLine(raw, command, {}, comment)
        params: dict[str, float] = {}
        flags = set()
        pos = 0
        while pos < len(rest):
            if rest[pos].isspace():
                pos += 1
                continue
            w = _WORD.match(rest, pos)
            if w:
                value = float(w.group(2))
                if not math.isfinite(value):
                    raise GcodeParseError(line_no, raw, "non-finite parameter")
                params[w.group(1).upper()] = value
                pos = w.end()
                continue
            f = _FLAG.match(rest, pos)
            if f:
                flags.add(f.group(1).upper())
                pos = f.end()
                continue
            raise GcodeParseError(line_no, raw, "malformed numeric parameter")
        return GcodeLine(raw, command, params, comment, frozenset(flags))

    m = _EXTENDED_CMD.match(body)
    if m and len(m.group(1)) > 1:
        return GcodeLine(raw, m.group(1).upper(), {}, comment)
    return GcodeLine(raw, None, {}, comment)


def _split_lines(text: str) -> list[str]:
    return re.findall(r"[^\n]*\n|[^\n]+$", text)


def parse(text: str) -> GcodeDocument:
    """Parse G-code text into a lossless document (layers not yet detected)."""
    lines = tuple(parse_line(raw, i + 1) for i, raw in enumerate(_split_lines(text)))
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return GcodeDocument(lines=lines, source_digest=digest)


def serialize(doc: GcodeDocument | Iterable[GcodeLine]) -> str:
    lines = doc.lines if isinstance(doc, GcodeDocument) else doc
    return "".join(line.raw_text for line in lines)


def parse_extended_args(line: GcodeLine | str) -> dict[str, str]:
    """``KEY=value`` arguments of an extended (Klipper style) command."""
    raw = line.raw_text if isinstance(line, GcodeLine) else line
    code = _code_part(raw)
    parts = code.split(None, 1)
    if len(parts) < 2:
        return {}
    return {k.upper(): v.strip('"') for k, v in _EXT_ARG.findall(parts[1])}


# ---------------------------------------------------------------------------
# motion analysis


@dataclass(frozen=True)
class Move:
    index: int
    start: tuple[float, float, float]
    end: tuple[float, float, float]
    de: float
    e_after: float
    absolute_e: bool

    @property
    def xy_length(self) -> float:
        return math.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1])

    @property
    def length(self) -> float:
        return math.dist(self.start, self.end)

    @property
    def extruding(self) -> bool:
        return self.de > 1e-9 and self.xy_length > 1e-9


def injected_mask(lines: Sequence[GcodeLine]) -> list[bool]:
    mask = [False] * len(lines)
    inside = False
    for i, line in enumerate(lines):
        raw = line.raw_text.lstrip("\r\n")
        if _BEGIN_RE.match(raw):
            inside = True
        if inside:
            mask[i] = True
        if _END_RE.match(raw):
            inside = False
    return mask


def scan_moves(lines: Sequence[GcodeLine], skip: Sequence[bool] | None = None) -> list[Move]:
    """Track modal position state and return every G0/G1 move.

    Lines flagged in ``skip`` still update modal state (they execute on the
    printer) but are not reported.
    """
    x = y = z = e = 0.0
    abs_xyz = True
    abs_e = True
    moves: list[Move] = []
    for i, line in enumerate(lines):
        cmd = line.command
        if cmd is None:
            continue
        p = line.params
        if cmd == "G90":
            abs_xyz = abs_e = True
        elif cmd == "G91":
            abs_xyz = abs_e = False
        elif cmd == "M82":
            abs_e = True
        elif cmd == "M83":
            abs_e = False
        elif cmd == "G92":
            x = p.get("X", x)
            y = p.get("Y", y)
            z = p.get("Z", z)
            if "E" in p or not p:
                e = p.get("E", 0.0)
        elif cmd in ("G0", "G1"):
            start = (x, y, z)
            if abs_xyz:
                x, y, z = p.get("X", x), p.get("Y", y), p.get("Z", z)
            else:
                x, y, z = x + p.get("X", 0.0), y + p.get("Y", 0.0), z + p.get("Z", 0.0)
            de = 0.0
            if "E" in p:
                if abs_e:
                    de = p["E"] - e
                    e = p["E"]
                else:
                    de = p["E"]
                    e += de
            if skip is None or not skip[i]:
                moves.append(Move(i, start, (x, y, z), de, e, abs_e))
        elif cmd == "G28":
            axes = set(p) | set(line.flags)
            if not axes & {"X", "Y", "Z"}:
                x = y = z = 0.0
            else:
                x = 0.0 if "X" in axes else x
                y = 0.0 if "Y" in axes else y
                z = 0.0 if "Z" in axes else z
    return moves


def _state_at(lines: Sequence[GcodeLine], index: int) -> tuple[tuple[float, float, float], float, bool]:
    """Position, E value and E-mode in effect just before ``lines[index]``."""
    moves = scan_moves(lines[:index])
    abs_e = True
    for line in lines[:index]:
        if line.command in ("M82", "G90"):
            abs_e = True
        elif line.command in ("M83", "G91"):
            abs_e = False
    if not moves:
        return (0.0, 0.0, 0.0), 0.0, abs_e
    last = moves[-1]
    e = last.e_after
    for line in lines[last.index + 1:index]:
        if line.command == "G92" and ("E" in line.params or not line.params):
            e = line.params.get("E", 0.0)
    return last.end, e, abs_e


# ---------------------------------------------------------------------------
# segmentation


def _balanced_partition(lengths: Sequence[float], k: int) -> list[int]:
    """Indices of the last move in each of ``k`` contiguous parts."""
    n = len(lengths)
    if k > n:
        raise GcodeError(f"cannot split {n} extrusion moves into {k} segments")
    cum = []
    total = 0.0
    for length in lengths:
        total += length
        cum.append(total)
    ends = []
    lo = 0
    for j in range(1, k):
        target = total * j / k
        hi = n - (k - j) - 1
        best = min(range(lo, hi + 1), key=lambda m: (abs(cum[m] - target), m))
        ends.append(best)
        lo = best + 1
    ends.append(n - 1)
    return ends


def segment_layers(doc: GcodeDocument, k: int = 1) -> GcodeDocument:
    """Detect layers and split each layer's extrusion into ``k`` parts.

    Slicer markers (``;LAYER:n``, ``;LAYER_CHANGE``) win over the
    Z-increase heuristic.  Parts are balanced on extrusion path length.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    lines = doc.lines
    skip = injected_mask(lines)
    moves = scan_moves(lines, skip)
    extrusions = [m for m in moves if m.extruding]
    if not extrusions:
        raise EmptyToolpathError()

    markers = [
        i for i, line in enumerate(lines)
        if not skip[i] and line.comment is not None and _LAYER_MARKER.match(line.raw_text)
    ]
    starts: list[int] = []
    if markers:
        starts = markers
    else:
        current_z = None
        last_z_line = 0
        prev_z = None
        for m in moves:
            if prev_z is None or abs(m.end[2] - m.start[2]) > 1e-9:
                last_z_line = m.index
            prev_z = m.end[2]
            if m.extruding and (current_z is None or m.end[2] > current_z + 1e-6):
                current_z = m.end[2]
                starts.append(last_z_line)

    raw_layers = []
    for n, start in enumerate(starts):
        stop = starts[n + 1] if n + 1 < len(starts) else len(lines)
        layer_moves = [m for m in extrusions if start <= m.index < stop]
        if not layer_moves:
            continue
        if n + 1 == len(starts):
            stop = layer_moves[-1].index + 1
        raw_layers.append((start, stop, layer_moves))

    layers = []
    for idx, (start, stop, layer_moves) in enumerate(raw_layers):
        ends = _balanced_partition([m.xy_length for m in layer_moves], k)
        spans = []
        begin = layer_moves[0].index
        for end_move in ends:
            finish = layer_moves[end_move].index + 1
            spans.append((begin, finish))
            begin = finish
        layers.append(LayerSegment(idx, round(layer_moves[0].end[2], 6), (start, stop), tuple(spans)))

    height = _layer_height_from_comments(lines)
    if height is None:
        zs = [layer.z for layer in layers]
        deltas = sorted(round(b - a, 6) for a, b in zip(zs, zs[1:]) if b > a)
        height = deltas[len(deltas) // 2] if deltas else (zs[0] if zs else None)
    return replace(doc, layers=tuple(layers), layer_height=height, segments_per_layer=k)


def _layer_height_from_comments(lines: Sequence[GcodeLine]) -> float | None:
    for line in lines:
        if line.comment is not None:
            m = _LAYER_HEIGHT_COMMENT.match(line.raw_text)
            if m:
                return float(m.group(1))
    return None


def model_bounds(doc: GcodeDocument) -> tuple[float, float, float, float]:
    """XY bounding box (xmin, ymin, xmax, ymax) of model extrusion moves."""
    ext = [m for m in scan_moves(doc.lines, injected_mask(doc.lines)) if m.extruding]
    if not ext:
        raise EmptyToolpathError()
    xs = [c for m in ext for c in (m.start[0], m.end[0])]
    ys = [c for m in ext for c in (m.start[1], m.end[1])]
    return min(xs), min(ys), max(xs), max(ys)


# ---------------------------------------------------------------------------
# purge tower


def _fmt(v: float, digits: int = 3) -> str:
    s = f"{v:.{digits}f}"
    return s.lstrip("-") if float(s) == 0 else s


def purge_center(policy: CheckpointPolicy) -> tuple[float, float]:
    tower = policy.purge_tower
    if tower is None:
        raise ValueError("policy has no purge tower")
    if tower.center is not None:
        return tower.center
    r = tower.diameter / 2
    px, py = policy.park_position
    return (px + r + 5.0, py + r + 5.0)


def synthesize_purge_tower(spec: PurgeTower, n_layers: int, center: tuple[float, float] | None = None) -> list[list[str]]:
    """Concentric-loop cylinder toolpath, one block of lines per layer.

    Blocks use relative extrusion (``M83`` must be active) and absolute XYZ.
    """
    if spec.diameter <= spec.extrusion_width:
        raise ValueError("purge diameter must exceed the extrusion width")
    if n_layers < 1:
        raise ValueError("n_layers must be >= 1")
    cx, cy = center if center is not None else (spec.center or (0.0, 0.0))
    w = spec.extrusion_width
    filament_area = math.pi * (spec.filament_diameter / 2) ** 2
    e_per_mm = spec.layer_height * w / filament_area
    radii = []
    r = spec.diameter / 2 - w / 2
    while r >= w / 2 - 1e-9:
        radii.append(r)
        r -= w
    blocks = []
    for i in range(n_layers):
        z = (i + 1) * spec.layer_height
        block = [f"; purge tower layer {i}"]
        for ring, radius in enumerate(radii):
            sides = max(12, int(math.ceil(2 * math.pi * radius / 1.0)))
            pts = [
                (cx + radius * math.cos(2 * math.pi * s / sides), cy + radius * math.sin(2 * math.pi * s / sides))
                for s in range(sides + 1)
            ]
            if ring == 0:
                block.append(f"G0 X{_fmt(pts[0][0])} Y{_fmt(pts[0][1])} Z{_fmt(z)} F{spec.feed_rate * 4:.0f}")
            else:
                block.append(f"G0 X{_fmt(pts[0][0])} Y{_fmt(pts[0][1])}")
            for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
                e = math.hypot(x1 - x0, y1 - y0) * e_per_mm
                block.append(f"G1 X{_fmt(x1)} Y{_fmt(y1)} E{e:.5f} F{spec.feed_rate:.0f}")
        blocks.append(block)
    return blocks


# ---------------------------------------------------------------------------
# checkpoint injection


def _block_id(doc: GcodeDocument, n: int) -> str:
    return str(uuid.uuid5(_NAMESPACE, f"{doc.source_digest}:{n}"))


def _eol_of(lines: Sequence[GcodeLine]) -> str:
    for line in lines:
        if line.raw_text.endswith("\r\n"):
            return "\r\n"
        if line.raw_text.endswith("\n"):
            return "\n"
    return "\n"


def _boundaries(doc: GcodeDocument, policy: CheckpointPolicy) -> list[tuple[int, int, int]]:
    """(insert_at, layer_index, segment_index) for each checkpoint."""
    out = []
    last = len(doc.layers) - 1
    for layer in doc.layers:
        if policy.granularity == "per-segment":
            for s, (_, end) in enumerate(layer.sub_segments):
                at = end if s + 1 < len(layer.sub_segments) else layer.line_span[1]
                out.append((at, layer.layer_index, s))
        elif policy.granularity == "per-layer" or (layer.layer_index + 1) % policy.every == 0 or layer.layer_index == last:
            out.append((layer.line_span[1], layer.layer_index, 0))
    return out


def inject_checkpoints(doc: GcodeDocument, policy: CheckpointPolicy) -> GcodeDocument:
    """Insert pause/park/capture blocks (and purge-tower layers) at policy boundaries."""
    if not doc.layers:
        doc = segment_layers(doc, policy.k)
    elif doc.segments_per_layer != policy.k:
        doc = segment_layers(doc, policy.k)
    lines = list(doc.lines)
    eol = _eol_of(lines)
    tower = policy.purge_tower
    purge_blocks: list[list[str]] = []
    if tower is not None:
        center = purge_center(policy)
        r = tower.diameter / 2
        xmin, ymin, xmax, ymax = model_bounds(doc)
        if cx_overlap(center[0] - r, center[0] + r, xmin, xmax) and cx_overlap(center[1] - r, center[1] + r, ymin, ymax):
            raise PlacementError(
                f"purge tower at ({center[0]:.1f}, {center[1]:.1f}) d={tower.diameter} "
                f"intersects model bounds x[{xmin:.1f},{xmax:.1f}] y[{ymin:.1f},{ymax:.1f}]"
            )
        purge_blocks = synthesize_purge_tower(tower, len(doc.layers), center)

    inserts: dict[int, list[list[str]]] = {}
    counter = 0
    if purge_blocks:
        first = doc.layers[0].sub_segments[0][0]
        inserts.setdefault(first, []).append(("purge", 0))
    bounds = _boundaries(doc, policy)
    for n, (at, layer_idx, seg_idx) in enumerate(bounds):
        next_layer = None
        if purge_blocks:
            nxt = bounds[n + 1] if n + 1 < len(bounds) else None
            if nxt is not None and nxt[1] != layer_idx:
                next_layer = nxt[1]
        inserts.setdefault(at, []).append(("checkpoint", layer_idx, seg_idx, next_layer))

    out: list[GcodeLine] = []
    for i in range(len(lines) + 1):
        for item in inserts.get(i, []):
            block_id = _block_id(doc, counter)
            counter += 1
            pos, e_val, abs_e = _state_at(lines, i)
            body: list[str] = []
            if item[0] == "checkpoint":
                _, layer_idx, seg_idx, next_layer = item
                px, py = policy.park_position
                body.append(f"; printloop checkpoint layer={layer_idx} segment={seg_idx}")
                body.append(policy.pause_command)
                body.append(f"G0 X{_fmt(px)} Y{_fmt(py)} F{policy.travel_feed:.0f}")
                body.append(f"{policy.capture_marker} LAYER={layer_idx} SEGMENT={seg_idx}")
                if next_layer is not None:
                    body += _wrap_purge(purge_blocks[next_layer], abs_e, e_val)
                body.append(f"G0 X{_fmt(pos[0])} Y{_fmt(pos[1])} Z{_fmt(pos[2])} F{policy.travel_feed:.0f} ; resume")
            else:
                body += _wrap_purge(purge_blocks[item[1]], abs_e, e_val)
                body.append(f"G0 X{_fmt(pos[0])} Y{_fmt(pos[1])} Z{_fmt(pos[2])} F{policy.travel_feed:.0f} ; resume")
            prefix = ""
            noeol = ""
            if i > 0 and i == len(lines) and not lines[-1].raw_text.endswith("\n"):
                prefix = eol
                noeol = " noeol"
            block = [prefix + f";<printloop:begin {block_id}>"] + body + [f";<printloop:end {block_id}{noeol}>"]
            out.extend(parse_line(text + eol) for text in block)
        if i < len(lines):
            out.append(lines[i])
    new_doc = GcodeDocument(tuple(out), source_digest=doc.source_digest)
    return segment_layers(new_doc, policy.k)


def cx_overlap(a0: float, a1: float, b0: float, b1: float) -> bool:
    return a0 < b1 and b0 < a1


def _wrap_purge(block: list[str], abs_e: bool, e_val: float) -> list[str]:
    out = ["M83"] + block
    if abs_e:
        out += ["M82", f"G92 E{e_val:.5f}"]
    return out


def strip_checkpoints(doc: GcodeDocument) -> GcodeDocument:
    """Remove every sentinel-delimited block, restoring the original lines."""
    out: list[GcodeLine] = []
    inside = False
    for line in doc.lines:
        raw = line.raw_text
        if _BEGIN_RE.match(raw.lstrip("\r\n")):
            inside = True
            continue
        if inside:
            m = _END_RE.match(raw)
            if m:
                inside = False
                if m.group(2) and out:
                    prev = out[-1].raw_text.rstrip("\r\n")
                    out[-1] = replace(out[-1], raw_text=prev)
            continue
        out.append(line)
    return GcodeDocument(tuple(out), source_digest=doc.source_digest)


def strip_text(text: str) -> str:
    return serialize(strip_checkpoints(parse(text)))


def find_checkpoints(doc: GcodeDocument, capture_marker: str = "CAPTURE_CHECKPOINT") -> list[Checkpoint]:
    """Locate injected checkpoint blocks that contain a capture marker."""
    found = []
    begin = None
    block_id = None
    info = None
    for i, line in enumerate(doc.lines):
        raw = line.raw_text.lstrip("\r\n")
        m = _BEGIN_RE.match(raw)
        if m:
            begin, block_id, info = i, m.group(1), None
            continue
        if begin is None:
            continue
        if line.command == capture_marker.upper():
            args = parse_extended_args(line)
            info = (int(args.get("LAYER", 0)), int(args.get("SEGMENT", 0)))
        if _END_RE.match(raw):
            if info is not None:
                found.append(Checkpoint(info[0], info[1], begin, i + 1, block_id))
            begin = None
    return found


# ---------------------------------------------------------------------------
# parameter commands


PARAMETERS = (
    "speed_factor",
    "flow_factor",
    "nozzle_temp",
    "bed_temp",
    "fan",
    "pressure_advance",
    "retraction",
    "z_adjust",
)


@dataclass(frozen=True)
class ParameterChange:
    """A requested process-parameter change.

    Factors and fan are fractions (0.75 = 75 %), temperatures are degC,
    ``z_adjust`` is a relative offset in mm.  ``retraction`` uses ``value``
    for length (mm) and ``speed`` for retract speed (mm/s).
    """

    param: str
    value: float
    speed: float | None = None


def render_parameter_command(change: ParameterChange) -> list[str]:
    p, v = change.param, change.value
    if p == "speed_factor":
        return [f"M220 S{round(v * 100)}"]
    if p == "flow_factor":
        return [f"M221 S{round(v * 100)}"]
    if p == "nozzle_temp":
        return [f"M104 S{round(v)}"]
    if p == "bed_temp":
        return [f"M140 S{round(v)}"]
    if p == "fan":
        return [f"M106 S{min(255, max(0, round(v * 255)))}"]
    if p == "pressure_advance":
        return [f"SET_PRESSURE_ADVANCE ADVANCE={_fmt(v)}"]
    if p == "retraction":
        if change.speed is None:
            raise UnsupportedParameterError("retraction change needs a speed")
        return [f"SET_RETRACTION RETRACT_LENGTH={_fmt(v)} RETRACT_SPEED={_fmt(change.speed, 1)}"]
    if p == "z_adjust":
        return [f"SET_GCODE_OFFSET Z_ADJUST={_fmt(v)} MOVE=1"]
    raise UnsupportedParameterError(f"unsupported parameter {p!r}")


def parse_parameter_command(text: str | GcodeLine) -> ParameterChange | None:
    """Inverse of :func:`render_parameter_command` for one line, else ``None``."""
    line = text if isinstance(text, GcodeLine) else parse_line(text)
    cmd, p = line.command, line.params
    if cmd == "M220" and "S" in p:
        return ParameterChange("speed_factor", p["S"] / 100)
    if cmd == "M221" and "S" in p:
        return ParameterChange("flow_factor", p["S"] / 100)
    if cmd in ("M104", "M109") and "S" in p:
        return ParameterChange("nozzle_temp", p["S"])
    if cmd in ("M140", "M190") and "S" in p:
        return ParameterChange("bed_temp", p["S"])
    if cmd == "M106":
        return ParameterChange("fan", p.get("S", 255) / 255)
    if cmd == "M107":
        return ParameterChange("fan", 0.0)
    args = parse_extended_args(line) if cmd else {}
    try:
        if cmd == "SET_PRESSURE_ADVANCE" and "ADVANCE" in args:
            return ParameterChange("pressure_advance", float(args["ADVANCE"]))
        if cmd == "SET_RETRACTION" and "RETRACT_LENGTH" in args and "RETRACT_SPEED" in args:
            return ParameterChange("retraction", float(args["RETRACT_LENGTH"]), float(args["RETRACT_SPEED"]))
        if cmd == "SET_GCODE_OFFSET" and "Z_ADJUST" in args:
            return ParameterChange("z_adjust", float(args["Z_ADJUST"]))
    except ValueError:
        return None
    return None
