"""Virtual printer: defect model, renderer, simulator core and HTTP surface."""

from .model import DefectSeverities, Nominal, REPORT_THRESHOLD, compute_severities
from .printer import CheckpointEvent, Job, SimError, SimTransport, VirtualPrinter
from .render import LayerRender, decode_png, encode_png, render_layer_image
from .scenario import Scenario, bundled, load_scenario
from .server import SimServer

__all__ = [
    "CheckpointEvent",
    "DefectSeverities",
    "Job",
    "LayerRender",
    "Nominal",
    "REPORT_THRESHOLD",
    "Scenario",
    "SimError",
    "SimServer",
    "SimTransport",
    "VirtualPrinter",
    "bundled",
    "compute_severities",
    "decode_png",
    "encode_png",
    "load_scenario",
    "render_layer_image",
]
