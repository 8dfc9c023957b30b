"""
This module defines custom exceptions for the simloop application.

Every error carries the process exit code the CLI should use, so a failure deep
inside a stage can be reported and mapped to a status without the CLI knowing
which module raised it. Exit codes: 2 validation, 3 simulation blow-up, 4 I/O.
"""
from typing import Optional


class SimloopError(Exception):
    """Base class for all custom exceptions in the simloop application.

    Attributes:
        exit_code (int): The process exit status used by the CLI.
        stage (Optional[str]): The pipeline stage that raised the error, set by
            the stage runner when the error crosses a stage boundary.
    """
    exit_code = 1

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message
        self.stage: Optional[str] = None


class SimloopWarning(UserWarning):
    """Non-fatal condition worth reporting in the stage manifest."""
    pass


# --- Validation errors (exit 2) ---

class ValidationError(SimloopError):
    """Raised when an input violates a data-model invariant."""
    exit_code = 2


class ConfigError(ValidationError):
    """Raised when the pipeline configuration is malformed or out of range."""
    pass


class PlacementError(ValidationError):
    """Raised when an object cannot be placed from its mask and depth."""
    pass


class InsufficientMatchesError(ValidationError):
    """Raised when fewer than three feature matches are available for rotation."""
    pass


class DegenerateMatchesError(ValidationError):
    """Raised when all matched points coincide and no rotation is defined."""
    pass


class DomainError(ValidationError):
    """Raised when the simulation domain cannot be built or a particle leaves it."""
    pass


class MaterialError(ValidationError):
    """Raised for unknown material labels or out-of-range material parameters."""
    pass


class MaterialTableError(MaterialError):
    """Raised when a material table file cannot be parsed.

    Attributes:
        line (Optional[int]): 1-based line number of the offending row, if known.
    """
    def __init__(self, message: str, line: Optional[int] = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")
        self.line = line


class EmptyBackgroundError(ValidationError):
    """Raised when a bundle has no valid background pixels in any frame."""
    pass


class EmptyLossSupportError(ValidationError):
    """Raised when no frame has a single countable pixel for the texture loss."""
    pass


class StageDependencyError(ValidationError):
    """Raised when a stage runs before the stage producing its inputs."""
    pass


class FlowShapeError(ValidationError):
    """Raised when flow fields or masks with different resolutions are combined."""
    pass


# --- Simulation errors (exit 3) ---

class SimulationError(SimloopError):
    """Base class for failures inside the MPM solver."""
    exit_code = 3


class SimulationBlowUpError(SimulationError):
    """Raised when particle state becomes non-finite or inverted.

    Attributes:
        reason (str): What went wrong, without the location prefix.
        step (int): The substep index at which the blow-up was detected.
        frame (Optional[int]): The output frame being simulated, if known.
    """
    def __init__(self, message: str, step: int, frame: Optional[int] = None):
        where = f"step {step}" if frame is None else f"frame {frame}, step {step}"
        super().__init__(f"simulation blow-up at {where}: {message}")
        self.reason = message
        self.step = step
        self.frame = frame


class CFLViolationError(SimulationError):
    """Raised when a requested time step exceeds the stability bound."""
    pass


# --- I/O errors (exit 4) ---

class ArtifactIOError(SimloopError):
    """Raised when an artifact cannot be read or written."""
    exit_code = 4


class BundleIncompleteError(ArtifactIOError):
    """Raised when a required bundle file is missing."""
    pass


class FlowFormatError(ArtifactIOError):
    """Raised when a .flo file has a bad magic number or is truncated."""
    pass


class UnknownArtifactError(ArtifactIOError):
    """Raised by `inspect` for files it does not know how to summarise."""
    pass
