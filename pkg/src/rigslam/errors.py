"""Exception types shared across the SLAM core."""


class RigSlamError(Exception):
    """Base class for all library errors."""


class InvalidIntrinsicsError(RigSlamError):
    """Intrinsic matrix is singular or otherwise unusable."""


class BehindCameraError(RigSlamError):
    """Point has non-positive depth in the target camera."""


class CalibrationFormatError(RigSlamError):
    """Rig calibration file is malformed or inconsistent."""


class DegenerateConfigurationError(RigSlamError):
    """Input geometry does not constrain the model (e.g. all rays central)."""


class InsufficientDataError(RigSlamError):
    """Fewer samples than the solver's minimal set."""


class LowParallaxError(RigSlamError):
    """Rays are too close to parallel for a stable solution."""


class CheiralityError(RigSlamError):
    """Triangulated point lies behind a contributing camera."""


class NoConsensusError(RigSlamError):
    """RANSAC found no model with the minimal inlier support."""


class PoseUnreliableError(RigSlamError):
    """Pose solve converged but residual cost is above the acceptance gate."""


class OptimizationFailedError(RigSlamError):
    """Normal equations stayed singular/indefinite after damping escalation."""


class InsufficientOverlapError(RigSlamError):
    """Too few associated pose pairs between two trajectories."""
