"""Frame acquisition: image container, synthetic speckle, warping, sources."""

from .deform import (
    IDENTITY,
    Affine,
    Band,
    DeformationSchedule,
    DisplacementMap,
    Rotate,
    Translate,
    map_from_json,
    map_to_json,
    schedule_from_json,
    schedule_to_json,
    warp_image,
    warp_pixels,
)
from .image import GrayImage, quantize_to_u8, to_grayscale, u8_to_unit
from .sources import (
    DEFAULT_ACTIVATION_DELAY,
    FrameSource,
    ReplaySource,
    SimulatedSource,
    load_frame_png,
    read_replay_manifest,
)
from .speckle import SpeckleSpec, generate_speckle

__all__ = [
    "IDENTITY",
    "Affine",
    "Band",
    "DeformationSchedule",
    "DisplacementMap",
    "Rotate",
    "Translate",
    "map_from_json",
    "map_to_json",
    "schedule_from_json",
    "schedule_to_json",
    "warp_image",
    "warp_pixels",
    "GrayImage",
    "quantize_to_u8",
    "to_grayscale",
    "u8_to_unit",
    "DEFAULT_ACTIVATION_DELAY",
    "FrameSource",
    "ReplaySource",
    "SimulatedSource",
    "load_frame_png",
    "read_replay_manifest",
    "SpeckleSpec",
    "generate_speckle",
]
