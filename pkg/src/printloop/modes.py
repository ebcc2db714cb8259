"""Defect taxonomy shared by the simulator, the agents and evaluation."""

from enum import Enum


class FailureMode(str, Enum):
    # layer shift is deliberately absent: it cannot be corrected mid-print
    WARPING = "warping"
    LAYER_SEPARATION = "layer_separation"
    BED_ADHESION = "bed_adhesion"
    UNDER_EXTRUSION = "under_extrusion"
    OVER_EXTRUSION = "over_extrusion"
    INCONSISTENT_EXTRUSION = "inconsistent_extrusion"
    STRINGING_OOZING = "stringing_oozing"
    BLOBS_ZITS = "blobs_zits"
    PRINT_CRACKS = "print_cracks"
    GHOSTING = "ghosting"
    RINGING = "ringing"
    ELEPHANT_FOOT = "elephant_foot"

    @classmethod
    def parse(cls, text: str) -> "FailureMode":
        key = text.strip().lower().replace("-", "_").replace("/", "_").replace(" ", "_")
        aliases = {
            "stringing": cls.STRINGING_OOZING,
            "oozing": cls.STRINGING_OOZING,
            "blobs": cls.BLOBS_ZITS,
            "zits": cls.BLOBS_ZITS,
            "adhesion": cls.BED_ADHESION,
            "extrusion_inconsistency": cls.INCONSISTENT_EXTRUSION,
            "cracks": cls.PRINT_CRACKS,
        }
        if key in aliases:
            return aliases[key]
        return cls(key)


MODES = tuple(FailureMode)
