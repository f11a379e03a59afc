"""dicflow: closed-loop digital image correlation.

Dense window-based optical flow measures full-field Green strain between
the boundary frames of fixed-duration capture batches; a feedback policy
turns the strain summary into the camera frame rate for the next batch,
so acquisition densifies exactly when the specimen starts yielding or
cracking.
"""

from .controller import (
    BatchRecord,
    RatePolicy,
    RunConfig,
    analyze_batch,
    decide_rate,
    default_policy,
    run_batch,
    run_experiment,
)
from .imaging import (
    DeformationSchedule,
    FrameSource,
    GrayImage,
    ReplaySource,
    SimulatedSource,
    SpeckleSpec,
    generate_speckle,
    to_grayscale,
    warp_image,
)
from .opticalflow import ROI, DisplacementField, FlowConfig, accumulate, solve_dense
from .persistence import ArchiveWriter, export_report, load_archive
from .strain import StrainField, StrainStats, displacement_gradients, green_strain, strain_stats

__version__ = "0.1.0"

__all__ = [
    "BatchRecord",
    "RatePolicy",
    "RunConfig",
    "analyze_batch",
    "decide_rate",
    "default_policy",
    "run_batch",
    "run_experiment",
    "DeformationSchedule",
    "FrameSource",
    "GrayImage",
    "ReplaySource",
    "SimulatedSource",
    "SpeckleSpec",
    "generate_speckle",
    "to_grayscale",
    "warp_image",
    "ROI",
    "DisplacementField",
    "FlowConfig",
    "accumulate",
    "solve_dense",
    "ArchiveWriter",
    "export_report",
    "load_archive",
    "StrainField",
    "StrainStats",
    "displacement_gradients",
    "green_strain",
    "strain_stats",
    "__version__",
]
