"""Parametric defect model of the virtual printer.

The coefficients are artifact constants: they encode only the causal
directions (more flow fixes under-extrusion, hotter nozzle strings more,
z error breaks adhesion) with linear clamps, and serve as the test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..client import PrinterSnapshot
from ..modes import FailureMode, MODES

RETRACT_LENGTH_REF = 2.0  # mm
RETRACT_SPEED_REF = 40.0  # mm/s
PRESSURE_ADVANCE_REF = 0.05  # s
Z_ERROR_FULL_SCALE = 0.2  # mm
TEMP_SPAN = 30.0  # degC
REPORT_THRESHOLD = 0.3


def clamp(v: float, lo: float = 0.0, hi: float = 1.0) -> float:
    return lo if v < lo else hi if v > hi else v


@dataclass(frozen=True)
class Nominal:
    print_speed: float = 120.0
    nozzle_temp: float = 190.0
    bed_temp: float = 60.0
    flow_factor: float = 1.0
    material: str = "PLA"


@dataclass
class DefectSeverities:
    values: dict[FailureMode, float] = field(default_factory=lambda: {m: 0.0 for m in MODES})

    def __post_init__(self):
        full = {m: 0.0 for m in MODES}
        for k, v in self.values.items():
            full[FailureMode(k)] = clamp(float(v))
        self.values = full

    def __getitem__(self, mode: FailureMode | str) -> float:
        return self.values[FailureMode(mode)]

    def reported(self, threshold: float = REPORT_THRESHOLD) -> list[FailureMode]:
        return [m for m in MODES if self.values[m] >= threshold]

    def as_dict(self) -> dict[str, float]:
        return {m.value: round(v, 6) for m, v in self.values.items()}

    @classmethod
    def from_dict(cls, data: dict[str, float]) -> "DefectSeverities":
        return cls({FailureMode(k): v for k, v in data.items()})

    @property
    def gap_fraction(self) -> float:
        """Fraction of footprint pixels left empty in the rendered layer."""
        return clamp(0.6 * self[FailureMode.UNDER_EXTRUSION] + 0.1 * self[FailureMode.INCONSISTENT_EXTRUSION])


def compute_severities(
    params: PrinterSnapshot,
    nominal: Nominal,
    z_offset_error: float = 0.0,
    first_layer: bool = False,
) -> DefectSeverities:
    """Map (effective) process parameters to per-mode severities in [0, 1].

    ``z_offset_error`` is the true nozzle height error in mm (commanded
    offset plus any hidden disturbance).  Adhesion trouble is reported as
    bed adhesion on the first layer and layer separation above it.
    """
    flow = params.flow_factor
    speed = params.print_speed * params.speed_factor
    temp = params.nozzle_temp.actual
    rt = params.retraction

    under = clamp((1.0 - flow) / 0.25)
    over = clamp((flow - 1.15) / 0.25)
    inconsistent = clamp((speed - nominal.print_speed) / nominal.print_speed) * 0.8 + 0.2 * under
    stringing = clamp(
        0.5 * max(0.0, (temp - nominal.nozzle_temp) / TEMP_SPAN)
        + 0.4 * max(0.0, (RETRACT_LENGTH_REF - rt.length) / RETRACT_LENGTH_REF)
        + 0.1 * max(0.0, (RETRACT_SPEED_REF - rt.speed) / RETRACT_SPEED_REF)
    )
    adhesion = clamp(abs(z_offset_error) / Z_ERROR_FULL_SCALE)
    bed = params.bed_temp.actual
    warping = clamp((nominal.bed_temp - bed) / TEMP_SPAN) if bed < nominal.bed_temp else 0.0
    blobs = clamp(0.6 * over + 0.4 * max(0.0, (PRESSURE_ADVANCE_REF - params.pressure_advance) / PRESSURE_ADVANCE_REF))

    values = {
        FailureMode.UNDER_EXTRUSION: under,
        FailureMode.OVER_EXTRUSION: over,
        FailureMode.INCONSISTENT_EXTRUSION: inconsistent,
        FailureMode.STRINGING_OOZING: stringing,
        FailureMode.BED_ADHESION if first_layer else FailureMode.LAYER_SEPARATION: adhesion,
        FailureMode.WARPING: warping,
        FailureMode.BLOBS_ZITS: blobs,
    }
    return DefectSeverities(values)
