"""Scenario files: TOML describing a job, its nominal and initial parameters,
hidden disturbances, checkpoint policy and seed."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from ..gcode import CheckpointPolicy, PurgeTower, parse
from .model import Nominal
from .printer import Job, VirtualPrinter

DATA_DIR = Path(__file__).resolve().parents[1] / "data"
SCENARIO_DIR = DATA_DIR / "scenarios"
GCODE_DIR = DATA_DIR / "gcode"


@dataclass
class Scenario:
    name: str
    part_description: str
    nominal: Nominal
    initial: dict[str, float] = field(default_factory=dict)
    hidden: dict[str, float] = field(default_factory=dict)
    perturbations: list[dict[str, Any]] = field(default_factory=list)
    policy: CheckpointPolicy = field(default_factory=CheckpointPolicy)
    gcode: Path | None = None
    synthetic: dict[str, Any] = field(default_factory=dict)
    start_layer: int = 0
    max_checkpoints: int | None = None
    image_size: int = 256
    seed: int = 0
    source: Path | None = None

    @property
    def material(self) -> str:
        return self.nominal.material

    def build_job(self) -> Job:
        if self.gcode is not None:
            doc = parse(self.gcode.read_text(encoding="utf-8"))
            job = Job.from_document(doc, self.policy, self.image_size, name=self.gcode.name)
        else:
            job = Job.synthetic(name=self.name, **self.synthetic)
        if self.start_layer:
            job.checkpoints = [c for c in job.checkpoints if c.layer_index >= self.start_layer]
        if self.max_checkpoints is not None:
            job.checkpoints = job.checkpoints[: self.max_checkpoints]
        return job

    def build_printer(self, seed: int | None = None, auto_advance: bool = True, start: bool = True) -> VirtualPrinter:
        printer = VirtualPrinter(self.nominal, self.initial, self.seed if seed is None else seed,
                                 auto_advance=auto_advance, hidden=self.hidden)
        for p in self.perturbations:
            printer.inject_perturbation(int(p["layer"]), p["kind"], float(p["magnitude"]))
        printer.load_job(self.build_job(), start=start)
        return printer


def resolve(name_or_path: str | Path) -> Path:
    """A scenario path, or the name of a bundled scenario."""
    p = Path(name_or_path)
    if p.exists():
        return p
    for cand in (SCENARIO_DIR / p, SCENARIO_DIR / f"{p}.toml", SCENARIO_DIR / p.name):
        if cand.exists():
            return cand
    raise FileNotFoundError(f"scenario not found: {name_or_path}")


def bundled() -> list[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.toml"))


def _policy(data: dict[str, Any]) -> CheckpointPolicy:
    purge = data.get("purge_tower")
    tower = None
    if purge:
        purge = dict(purge)
        if "center" in purge:
            purge["center"] = tuple(purge["center"])
        tower = PurgeTower(**purge)
    return CheckpointPolicy(
        granularity=data.get("granularity", "per-layer"),
        segments=int(data.get("segments", 1)),
        every=int(data.get("every", 1)),
        park_position=tuple(data.get("park_position", (0.0, 0.0))),
        capture_marker=data.get("capture_marker", "CAPTURE_CHECKPOINT"),
        purge_tower=tower,
    )


def load_scenario(name_or_path: str | Path) -> Scenario:
    path = resolve(name_or_path)
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    job = data.get("job", {})
    gcode = None
    if "gcode" in job:
        gp = Path(job["gcode"])
        for cand in (path.parent / gp, GCODE_DIR / gp, gp):
            if cand.exists():
                gcode = cand
                break
        else:
            raise FileNotFoundError(f"scenario {path.name}: gcode {gp} not found")
    return Scenario(
        name=data.get("name", path.stem),
        part_description=data.get("part_description", "printed part"),
        nominal=Nominal(**data.get("nominal", {})),
        initial=dict(data.get("initial", {})),
        hidden=dict(data.get("hidden", {})),
        perturbations=list(data.get("perturbation", [])),
        policy=_policy(data.get("checkpoint", {})),
        gcode=gcode,
        synthetic=dict(job.get("synthetic", {})),
        start_layer=int(job.get("start_layer", 0)),
        max_checkpoints=job.get("max_checkpoints"),
        image_size=int(job.get("image_size", 256)),
        seed=int(data.get("seed", 0)),
        source=path,
    )
