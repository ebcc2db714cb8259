"""Occupancy, parameter trajectories and detection-vs-annotation confusion matrices."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from .modes import MODES, FailureMode

DEFAULT_THRESHOLD = 0.5


# ---------------------------------------------------------------------------
# occupancy


def occupancy(image: np.ndarray, footprint: np.ndarray | None = None, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Occupied pixels over total pixels of the footprint (whole frame if none).

    Boolean images are used as-is.  Integer images are scaled by their
    dtype maximum, float images are taken to be in [0, 1]; pixels at or
    above ``threshold`` count as occupied.
    """
    img = np.asarray(image)
    if img.size == 0:
        raise ValueError("image is empty")
    if img.dtype == bool:
        occupied = img
    else:
        if not 0.0 < threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if np.issubdtype(img.dtype, np.integer):
            img = img / np.iinfo(img.dtype).max
        occupied = img >= threshold
    if footprint is None:
        return float(occupied.sum()) / occupied.size
    mask = np.asarray(footprint, dtype=bool)
    if mask.shape != occupied.shape:
        raise ValueError(f"footprint shape {mask.shape} differs from image shape {occupied.shape}")
    total = int(mask.sum())
    if total == 0:
        raise ValueError("footprint mask has zero area")
    return float((occupied & mask).sum()) / total


@dataclass
class OccupancySeries:
    points: list[tuple[int, float]] = field(default_factory=list)

    def add(self, checkpoint: int, value: float) -> None:
        if not 0.0 <= value <= 1.0:
            raise ValueError("occupancy must lie in [0, 1]")
        self.points.append((checkpoint, value))

    @property
    def values(self) -> list[float]:
        return [v for _, v in self.points]


def occupancy_series(records: Iterable[Mapping[str, Any]]) -> OccupancySeries:
    s = OccupancySeries()
    for r in records:
        if r.get("kind") == "capture" and r["payload"].get("occupancy") is not None:
            s.add(r["checkpoint"], r["payload"]["occupancy"])
    return s


# ---------------------------------------------------------------------------
# annotations


@dataclass
class AnnotationSet:
    """Per-layer defect labels from one source."""

    annotator: str
    role: str  # expert | participant | model
    layers: dict[int, set[FailureMode]] = field(default_factory=dict)

    def modes(self) -> set[FailureMode]:
        return set().union(*self.layers.values()) if self.layers else set()


def read_annotations(path: str | Path) -> dict[str, AnnotationSet]:
    """Tab-separated rows ``layer annotator role mode``; mode ``none`` marks a clean layer."""
    sets: dict[str, AnnotationSet] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh, delimiter="\t") if r and not r[0].startswith("#")]
    if rows and rows[0][0].strip().lower() == "layer":
        rows = rows[1:]
    for n, row in enumerate(rows, 1):
        if len(row) != 4:
            raise ValueError(f"{path}: row {n} has {len(row)} columns, expected 4")
        layer, annotator, role, mode = (c.strip() for c in row)
        s = sets.setdefault(annotator, AnnotationSet(annotator, role))
        if s.role != role:
            raise ValueError(f"{path}: annotator {annotator} has conflicting roles")
        labels = s.layers.setdefault(int(layer), set())
        if mode.lower() != "none":
            labels.add(FailureMode.parse(mode))
    return sets


def write_annotations(path: str | Path, sets: Iterable[AnnotationSet]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["layer", "annotator", "role", "mode"])
        for s in sets:
            for layer in sorted(s.layers):
                modes = sorted(m.value for m in s.layers[layer]) or ["none"]
                for m in modes:
                    w.writerow([layer, s.annotator, s.role, m])


def merge(sets: Iterable[AnnotationSet], annotator: str = "experts", role: str = "expert") -> AnnotationSet:
    """Union of labels per layer over several annotators."""
    out = AnnotationSet(annotator, role)
    for s in sets:
        for layer, modes in s.layers.items():
            out.layers.setdefault(layer, set()).update(modes)
    return out


def detections_from_log(records: Iterable[Mapping[str, Any]], annotator: str = "llm") -> AnnotationSet:
    """Detector reports in a session log, as a per-layer label set."""
    out = AnnotationSet(annotator, "model")
    for r in records:
        if r.get("kind") == "report" and r.get("module") == "detector":
            p = r["payload"]
            out.layers.setdefault(int(p["layer_index"]), set()).update(FailureMode(f["mode"]) for f in p["failures"])
    return out


# ---------------------------------------------------------------------------
# confusion matrices


@dataclass
class ModeCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def precision(self) -> float | None:
        d = self.tp + self.fp
        return self.tp / d if d else None

    @property
    def recall(self) -> float | None:
        d = self.tp + self.fn
        return self.tp / d if d else None

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class ConfusionMatrix:
    counts: dict[FailureMode, ModeCounts]
    n_layers: int

    def __getitem__(self, mode: FailureMode | str) -> ModeCounts:
        return self.counts[FailureMode(mode)]

    def rows(self) -> list[dict[str, Any]]:
        out = []
        for m, c in self.counts.items():
            out.append({"mode": m.value, "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn,
                        "precision": c.precision, "recall": c.recall})
        return out

    def write_tsv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["mode", "tp", "fp", "fn", "tn", "precision", "recall"])
            for r in self.rows():
                w.writerow([r["mode"], r["tp"], r["fp"], r["fn"], r["tn"],
                            "" if r["precision"] is None else f"{r['precision']:.4f}",
                            "" if r["recall"] is None else f"{r['recall']:.4f}"])


def compare_detections(detected: AnnotationSet, truth: AnnotationSet,
                       modes: Iterable[FailureMode] = MODES) -> ConfusionMatrix:
    """Per-mode, per-layer set comparison of detections against expert labels."""
    if truth.role != "expert":
        raise ValueError(f"truth must come from an expert, got role {truth.role!r}")
    if set(detected.layers) != set(truth.layers):
        missing = sorted(set(truth.layers) ^ set(detected.layers))
        raise ValueError(f"layer ranges differ (layers present on one side only: {missing})")
    counts = {m: ModeCounts() for m in modes}
    for layer in sorted(truth.layers):
        d, t = detected.layers[layer], truth.layers[layer]
        for m, c in counts.items():
            if m in d and m in t:
                c.tp += 1
            elif m in d:
                c.fp += 1
            elif m in t:
                c.fn += 1
            else:
                c.tn += 1
    return ConfusionMatrix(counts, len(truth.layers))


# ---------------------------------------------------------------------------
# parameter trajectories


def read_log(path: str | Path) -> list[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def parameter_trajectory(records: Iterable[Mapping[str, Any]]) -> dict[str, list[tuple[int, float]]]:
    """Commanded value per parameter over checkpoints.

    Each series starts with the value before the first change (at that
    checkpoint); every change then contributes its new value, effective
    from the next checkpoint.
    """
    series: dict[str, list[tuple[int, float]]] = defaultdict(list)
    for r in records:
        if r.get("kind") != "parameter_change":
            continue
        p = r["payload"]
        s = series[p["param"]]
        if not s and p.get("from") is not None:
            s.append((r["checkpoint"], p["from"]))
        s.append((r["checkpoint"] + 1, p["to"]))
    return dict(series)


def write_series_csv(path: str | Path, series: Mapping[str, list[tuple[int, float]]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "checkpoint", "value"])
        for name in sorted(series):
            for k, v in series[name]:
                w.writerow([name, k, v])


def plot_series(series: Mapping[str, list[tuple[int, float]]], out_dir: str | Path) -> list[Path]:
    """One step chart per series; needs matplotlib."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = []
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in sorted(series):
        ks, vs = zip(*series[name])
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.step(ks, vs, where="post", marker="o")
        ax.set_xlabel("checkpoint")
        ax.set_ylabel(name)
        ax.set_title(name)
        fig.tight_layout()
        p = out_dir / f"{name.replace('.', '_')}.png"
        fig.savefig(p, dpi=100)
        plt.close(fig)
        out.append(p)
    return out
