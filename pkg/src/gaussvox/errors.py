"""Exception types shared across the package."""


class GaussvoxError(Exception):
    """Base class for all library errors."""


class DegenerateRotationError(GaussvoxError):
    """Quaternion norm too close to zero to define a rotation."""


class InvalidScaleError(GaussvoxError):
    """Gaussian scale with a non-positive or out-of-range component."""


class GridMismatchError(GaussvoxError):
    """Two grids with incompatible GridSpec or class count."""


class UndefinedMetricError(GaussvoxError):
    """Metric requested on a confusion matrix with no eligible class."""


class UndefinedLossError(GaussvoxError):
    """Loss requested on a grid where every voxel is ignored."""


class CapacityError(GaussvoxError):
    """A pair list or payload would overflow the addressable index range."""


class FormatError(GaussvoxError):
    """Malformed scene or grid file.

    ``offset`` is the byte offset at which the fault was detected.
    """

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DivergenceError(GaussvoxError):
    """Fitting aborted because the loss became non-finite."""

    def __init__(self, iteration: int):
        super().__init__(f"loss became non-finite at iteration {iteration}")
        self.iteration = iteration
