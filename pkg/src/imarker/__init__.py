"""Detection, decoding and pose estimation for polarization-revealed square markers.

Submodules: ``imgcore`` (frames and pixel operations), ``align`` (features,
homographies, camera alignment), ``pipelines`` (the four detection
pipelines), ``marker`` (dictionaries, quads, decoding), ``pose``,
``simulator``, ``bench`` and ``cli``.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .align import CalibrationError, Homography, calibrate_alignment, warp_perspective
from .imgcore import ColorRangeHSV, Frame, FrameFormat, FrameFormatError, GrayRange, read_frame, write_frame
from .marker import Dictionary, MarkerDetection, default_dictionary, generate_dictionary, recognize
from .pipelines import (PIPELINES, STAGES, PipelineParams, PolarizerState, StageTrace, SyncedPair,
                        TemporalDetector, detect_dual, detect_mask, detect_range, detect_temporal,
                        pair_frames, polarizer_signal, run_dataset)
from .pose import CameraIntrinsics, MarkerGeometry, Pose6DoF, estimate_pose, pose_error

__all__ = [
    "BACKEND",
    "CalibrationError",
    "CameraIntrinsics",
    "ColorRangeHSV",
    "Dictionary",
    "Frame",
    "FrameFormat",
    "FrameFormatError",
    "GrayRange",
    "Homography",
    "MarkerDetection",
    "MarkerGeometry",
    "PIPELINES",
    "PipelineParams",
    "PolarizerState",
    "Pose6DoF",
    "STAGES",
    "StageTrace",
    "SyncedPair",
    "TemporalDetector",
    "__version__",
    "calibrate_alignment",
    "default_dictionary",
    "detect_dual",
    "detect_mask",
    "detect_range",
    "detect_temporal",
    "estimate_pose",
    "generate_dictionary",
    "pair_frames",
    "polarizer_signal",
    "pose_error",
    "read_frame",
    "recognize",
    "run_dataset",
    "warp_perspective",
    "write_frame",
]
