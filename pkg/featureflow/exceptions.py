"""Common exceptions."""

__all__ = [
    "FeatureFlowError",
    "ShapeMismatch",
    "InvalidConfig",
    "FormatError",
    "NonFiniteValue",
    "TrainingDiverged",
    "UnknownFrame",
]


class FeatureFlowError(Exception):
    """Base class of all errors raised by this library."""


class ShapeMismatch(FeatureFlowError, ValueError):
    """Indicates that two arrays do not have compatible shapes."""

    def __init__(self, operation: str, expected: tuple, actual: tuple):
        """Sets the operation and both offending shapes."""
        super().__init__(f"{operation}: expected shape {expected}, got {actual}.")
        self.operation = operation
        self.expected = expected
        self.actual = actual


class InvalidConfig(FeatureFlowError, ValueError):
    """Indicates that an invalid configuration has been specified."""


class FormatError(FeatureFlowError, ValueError):
    """Indicates a malformed tensor, checkpoint or detections file."""


class NonFiniteValue(FeatureFlowError, ArithmeticError):
    """Indicates that a computation yielded NaN or infinity."""


class TrainingDiverged(FeatureFlowError, ArithmeticError):
    """Indicates that the training loss became non-finite."""

    def __init__(self, step: int, loss: float):
        """Sets the step and the offending loss."""
        super().__init__(f"Loss became {loss} at step {step}.")
        self.step = step
        self.loss = loss


class UnknownFrame(FeatureFlowError, LookupError):
    """Indicates that a track has no box at the requested frame."""

    def __init__(self, object_id: int, frame: int):
        """Sets the track and the frame."""
        super().__init__(f"Track {object_id} has no box at frame {frame}.")
        self.object_id = object_id
        self.frame = frame
