from .copy_rotation import DegenerateMappingError, copy_rotation, decompose_onto_axes
from .mapping import PRESETS, JointMapping, MappingError, load_mapping, save_mapping
from .optimize import (
    LossBreakdown,
    ReferenceTargets,
    RetargetConfig,
    RetargetConfigError,
    RetargetInitError,
    RetargetProblem,
    RetargetResult,
    loss_optim,
    optimize_motion,
    reference_targets,
    retarget_align_optimize,
    retarget_optimize,
)
from .shape import ScalingError, align_skeleton_shape, bone_targets

__all__ = [
    "PRESETS",
    "DegenerateMappingError",
    "JointMapping",
    "LossBreakdown",
    "MappingError",
    "ReferenceTargets",
    "RetargetConfig",
    "RetargetConfigError",
    "RetargetInitError",
    "RetargetProblem",
    "RetargetResult",
    "ScalingError",
    "align_skeleton_shape",
    "bone_targets",
    "copy_rotation",
    "decompose_onto_axes",
    "load_mapping",
    "loss_optim",
    "optimize_motion",
    "reference_targets",
    "retarget_align_optimize",
    "retarget_optimize",
    "save_mapping",
]
