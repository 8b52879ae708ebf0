"""Exception hierarchy shared across slicekit modules."""


class SliceKitError(Exception):
    """Base class for all slicekit errors."""


class UserInputError(SliceKitError):
    """Bad user-supplied input (CLI maps these to exit code 2)."""


class ShapeError(SliceKitError, ValueError):
    """Tensor shapes incompatible with the requested operation."""


class TapeStateError(SliceKitError, RuntimeError):
    """Computation tape used in an invalid order (e.g. double backward)."""


class CriterionError(UserInputError):
    """Slicing criterion does not name a variable occurrence on its line."""


class DataFormatError(UserInputError):
    """Malformed dataset file or instance record."""


class GenerationError(SliceKitError):
    """Program or instance generation cannot proceed."""


class AnalysisError(SliceKitError):
    """Dependence analysis rejected its input (oracle needs well-formed code)."""


class CapacityError(SliceKitError):
    """An input exceeds a configured model capacity (length, OOV slots)."""


class CheckpointError(SliceKitError):
    """Checkpoint file is malformed, truncated, or inconsistent with config."""


class DecodeError(SliceKitError):
    """Beam search cannot produce any hypothesis."""


class MetricError(SliceKitError):
    """Metric undefined for the given inputs (e.g. empty gold slice)."""
