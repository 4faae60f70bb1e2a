"""End-effector pose estimation with a score-based diffusion model on point clouds."""
from .errors import ConfigError, DataError, EEPoseError, NumericError
from .geometry import Pose, PoseVec12, SymmetryFlags

__all__ = ["ConfigError", "DataError", "EEPoseError", "NumericError", "Pose", "PoseVec12", "SymmetryFlags"]
__version__ = "0.1.0"
