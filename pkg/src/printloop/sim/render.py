"""Synthetic layer images for the virtual printer."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from ..gcode import Move
from ..modes import FailureMode
from .model import DefectSeverities

OCCUPIED = 0.82
GAP = 0.25
STRAND = 0.62
BACKGROUND = 0.10


@dataclass
class LayerRender:
    binary: np.ndarray  # bool, True = deposited material inside the footprint
    gray: np.ndarray  # float in [0, 1]
    footprint: np.ndarray  # bool
    metadata: dict

    @property
    def ground_truth_occupancy(self) -> float:
        return self.metadata["ground_truth_occupancy"]


def default_footprint(shape: tuple[int, int] = (128, 128), margin: int = 16) -> np.ndarray:
    fp = np.zeros(shape, dtype=bool)
    fp[margin:-margin, margin:-margin] = True
    return fp


def rasterize_moves(moves: list[Move], width: float, origin: tuple[float, float], scale: float,
                    shape: tuple[int, int]) -> np.ndarray:
    """Footprint mask of extrusion moves drawn as capsules of ``width`` mm.

    Row 0 is the far edge of the bed (max Y) so the image reads like a top view.
    """
    h, w = shape
    mask = np.zeros(shape, dtype=bool)
    r_px = max(width * scale / 2, 0.5)
    ox, oy = origin
    for m in moves:
        x0, y0 = (m.start[0] - ox) * scale, (m.start[1] - oy) * scale
        x1, y1 = (m.end[0] - ox) * scale, (m.end[1] - oy) * scale
        c0 = int(max(0, np.floor(min(x0, x1) - r_px)))
        c1 = int(min(w - 1, np.ceil(max(x0, x1) + r_px)))
        r0 = int(max(0, np.floor(min(y0, y1) - r_px)))
        r1 = int(min(h - 1, np.ceil(max(y0, y1) + r_px)))
        if c0 > c1 or r0 > r1:
            continue
        ys, xs = np.mgrid[r0:r1 + 1, c0:c1 + 1]
        px, py = xs + 0.5, ys + 0.5
        dx, dy = x1 - x0, y1 - y0
        seg2 = dx * dx + dy * dy
        if seg2 == 0:
            t = np.zeros_like(px)
        else:
            t = np.clip(((px - x0) * dx + (py - y0) * dy) / seg2, 0.0, 1.0)
        d2 = (px - (x0 + t * dx)) ** 2 + (py - (y0 + t * dy)) ** 2
        mask[r0:r1 + 1, c0:c1 + 1] |= d2 <= r_px * r_px
    return mask[::-1].copy()


def _carve_gaps(footprint: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Remove ``fraction`` of footprint pixels as horizontal streaks."""
    occupied = footprint.copy()
    idx = np.flatnonzero(footprint)
    target = int(round(fraction * idx.size))
    if target <= 0:
        return occupied
    flat = occupied.reshape(-1)
    width = footprint.shape[1]
    carved = 0
    attempts = 0
    while carved < target and attempts < 50 * target:
        attempts += 1
        start = int(rng.integers(idx.size))
        length = int(rng.integers(3, 14))
        pos = idx[start]
        row = pos // width
        for j in range(length):
            p = pos + j
            if p // width != row or not footprint.reshape(-1)[p]:
                break
            if flat[p]:
                flat[p] = False
                carved += 1
                if carved >= target:
                    break
    if carved < target:
        remaining = np.flatnonzero(flat & footprint.reshape(-1))
        flat[remaining[: target - carved]] = False
    return occupied


def render_layer_image(severities: DefectSeverities, seed: int,
                       footprint: np.ndarray | None = None) -> LayerRender:
    """Render a layer: gaps carved for extrusion defects, strands for stringing.

    Strands are drawn only outside the footprint and only in the grayscale
    image, so they never count as occupied footprint pixels.
    """
    fp = default_footprint() if footprint is None else footprint.astype(bool)
    rng = np.random.default_rng(seed)
    g = severities.gap_fraction
    binary = _carve_gaps(fp, g, rng)

    gray = np.full(fp.shape, BACKGROUND, dtype=np.float64)
    gray += rng.uniform(-0.03, 0.03, size=fp.shape)
    gray[fp] = GAP
    gray[binary] = OCCUPIED + 0.1 * severities[FailureMode.OVER_EXTRUSION]

    blobs = severities[FailureMode.BLOBS_ZITS]
    if blobs > 0:
        pts = np.flatnonzero(binary)
        if pts.size:
            for p in rng.choice(pts, size=min(pts.size, int(round(blobs * 30))), replace=False):
                gray.reshape(-1)[p] = 0.97

    stringing = severities[FailureMode.STRINGING_OOZING]
    n_strands = int(round(stringing * 24))
    h, w = fp.shape
    for _ in range(n_strands):
        x0, y0 = rng.uniform(0, w), rng.uniform(0, h)
        ang = rng.uniform(0, np.pi)
        length = rng.uniform(10, max(12, w / 3))
        ts = np.linspace(0, 1, int(length * 2))
        xs = np.clip((x0 + np.cos(ang) * length * ts).astype(int), 0, w - 1)
        ys = np.clip((y0 + np.sin(ang) * length * ts).astype(int), 0, h - 1)
        keep = ~fp[ys, xs]
        gray[ys[keep], xs[keep]] = STRAND

    np.clip(gray, 0.0, 1.0, out=gray)
    meta = {
        "severities": severities.as_dict(),
        "gap_fraction": g,
        "ground_truth_occupancy": 1.0 - g,
        "footprint_pixels": int(fp.sum()),
        "seed": int(seed),
    }
    return LayerRender(binary, gray, fp, meta)


def encode_png(gray: np.ndarray, mask: np.ndarray | None = None, metadata: dict | None = None) -> bytes:
    """PNG bytes; the footprint (if given) travels as the alpha channel."""
    from PIL import Image, PngImagePlugin

    lum = np.round(np.clip(gray, 0, 1) * 255).astype(np.uint8)
    if mask is not None:
        img = Image.fromarray(np.dstack([lum, mask.astype(np.uint8) * 255]), mode="LA")
    else:
        img = Image.fromarray(lum, mode="L")
    info = PngImagePlugin.PngInfo()
    if metadata is not None:
        info.add_text("printloop", json.dumps(metadata, sort_keys=True))
    buf = io.BytesIO()
    img.save(buf, format="PNG", pnginfo=info)
    return buf.getvalue()


def decode_png(data: bytes) -> tuple[np.ndarray, np.ndarray | None, dict]:
    """Inverse of :func:`encode_png`: (gray in [0,1], footprint or None, metadata)."""
    from PIL import Image

    img = Image.open(io.BytesIO(data))
    img.load()
    meta = json.loads(img.text["printloop"]) if "printloop" in getattr(img, "text", {}) else {}
    arr = np.asarray(img)
    if img.mode == "LA":
        return arr[..., 0] / 255.0, arr[..., 1] > 127, meta
    if img.mode in ("RGB", "RGBA"):
        rgb = arr[..., :3].astype(np.float64)
        return (rgb @ np.array([0.299, 0.587, 0.114])) / 255.0, None, meta
    return arr / 255.0, None, meta


def render_front_view(layer_occupancy: list[float], width: int = 256, height: int = 96) -> np.ndarray:
    """Side profile: one horizontal band per printed layer, shaded by quality."""
    img = np.full((height, width), BACKGROUND)
    band = max(1, min(6, height // max(1, len(layer_occupancy) + 2)))
    x0, x1 = width // 6, width - width // 6
    for i, occ in enumerate(layer_occupancy):
        r1 = height - 4 - i * band
        r0 = max(0, r1 - band)
        if r1 <= 0:
            break
        img[r0:r1, x0:x1] = GAP + (OCCUPIED - GAP) * occ
    return img
