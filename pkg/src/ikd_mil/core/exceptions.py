"""
Custom exceptions for ikd_mil.

:hierarchy: [Core | Exceptions]
:complexity: 1
"""

# LLM:METADATA
# :hierarchy: [Core | Exceptions]
# :relates-to:
#  - implements: "Custom exception hierarchy for the entire package"
# :contract:
#  - pre: "Exceptions raised when specific error conditions occur"
#  - post: "Caller can catch and handle specific error types"
#  - invariant: "All exceptions inherit from IkdMilError base"
# :complexity: 1
# LLM:END

from typing import Optional


class IkdMilError(Exception):
    """Base exception for all ikd_mil errors."""

    pass


class ConfigurationError(IkdMilError):
    """
    Raised when configuration is invalid.

    Examples:
        - Unknown backbone identifier
        - Fusion weight length does not match block count
        - Empty training dataset
        - Test split offered for checkpoint selection
    """

    pass


class ConfigParseError(ConfigurationError):
    """
    Raised when a config file cannot be parsed into a RunConfig.

    Carries the dotted path of the offending key.
    """

    def __init__(self, message: str, key_path: str = ""):
        self.key_path = key_path
        prefix = f"{key_path}: " if key_path else ""
        super().__init__(f"{prefix}{message}")


class ShapeError(IkdMilError):
    """
    Raised when tensors or arrays do not have the expected shape.

    Examples:
        - Patch spatial size differs from the model input size
        - Prediction and target maps differ in shape
    """

    def __init__(self, message: str, expected=None, actual=None):
        self.expected = expected
        self.actual = actual
        if expected is not None or actual is not None:
            message = f"{message} (expected {expected}, got {actual})"
        super().__init__(message)


class PreconditionError(IkdMilError):
    """
    Raised when an operation is called outside its precondition.

    Examples:
        - Naive mask does not match the image-level label
        - Label outside {0, 1}
    """

    pass


class ModelIncompatibleError(IkdMilError):
    """Raised when two models (or a model and a checkpoint) differ in structure."""

    def __init__(self, message: str, parameter_name: Optional[str] = None):
        self.parameter_name = parameter_name
        super().__init__(message)


class InvariantViolationError(IkdMilError):
    """Raised when a runtime guard detects a broken invariant (e.g. teacher mutated)."""

    pass


class TrainingAbortedError(IkdMilError):
    """Raised when training cannot continue, e.g. on a non-finite loss."""

    def __init__(self, message: str, epoch: int, batch_index: int):
        self.epoch = epoch
        self.batch_index = batch_index
        super().__init__(f"{message} (epoch={epoch}, batch={batch_index})")


class DataError(IkdMilError):
    """Raised when dataset operations fail."""

    pass


class DataLoadError(DataError):
    """
    Raised when data loading fails.

    Examples:
        - Manifest missing or lacking an entry for an image
        - Dataset archive unreadable
    """

    pass


class DataGenerationError(DataError):
    """Raised when the synthetic generator cannot place lesion blobs."""

    pass


class PatchContractError(DataError):
    """Raised when an ImagePatch breaks its label/mask invariants."""

    pass


class GroundTruthAccessError(DataError):
    """Raised when a training consumer tries to read a ground-truth mask."""

    pass


class CheckpointError(IkdMilError):
    """Raised when a checkpoint cannot be read, or has the wrong version or tag."""

    pass


class MissingArtifactError(IkdMilError):
    """Raised by the CLI when a prerequisite artifact is missing."""

    def __init__(self, path, hint: str = ""):
        self.path = str(path)
        message = f"Required artifact not found: {self.path}"
        if hint:
            message = f"{message}. {hint}"
        super().__init__(message)
