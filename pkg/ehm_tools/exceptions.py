"""Custom exceptions for ehm-tools.

This module defines the exception hierarchy shared by the asset loader, the
forward model, the fitter and the command-line surface. Every exception
carries a human-readable message and an optional context dictionary that the
CLI renders as machine-readable JSON.
"""

from typing import Any


class EhmError(Exception):
    """Base exception for all ehm-tools errors.

    This is the root exception that all other custom exceptions inherit from.
    It provides a common interface for error handling across the application.
    """

    def __init__(self, message: str, context: dict[str, Any] | None = None) -> None:
        """Initialize the exception with a message and optional context.

        Args:
            message: Human-readable error message
            context: Optional dictionary with additional error context
        """
        super().__init__(message)
        self.message = message
        self.context = context or {}

    def __str__(self) -> str:
        """Return string representation of the error."""
        return self.message


class AssetFormatError(EhmError):
    """Exception raised when a model-asset file cannot be decoded."""

    pass


class BadMagic(AssetFormatError):
    """The file does not start with the asset magic bytes."""

    pass


class VersionUnsupported(AssetFormatError):
    """The file declares a format version this reader does not know."""

    pass


class ShapeMismatch(EhmError):
    """Exception raised when declared and actual tensor shapes disagree.

    Raised by the asset loader when a manifest entry does not match its
    payload, and by the photometric loss when the rendered image and the
    mask differ in size.
    """

    pass


class InvariantViolation(EhmError):
    """Exception raised when a loaded asset fails validation.

    The context carries the full list of violations under ``violations``.
    """

    pass


class InvalidSpec(EhmError):
    """Exception raised when a synthetic model specification is unusable."""

    pass


class AssetIoError(EhmError):
    """Exception raised when an asset file cannot be read or written."""

    pass


class DimensionError(EhmError):
    """Exception raised when array dimensions do not fit the model."""

    pass


class CompositionUnsupported(EhmError):
    """Exception raised when head composition is requested on a plain asset."""

    pass


class DegenerateBone(EhmError):
    """Exception raised when a mapped bone is too short to define a direction."""

    pass


class MapError(EhmError):
    """Exception raised when a joint map references joints that do not exist."""

    pass


class MissingSupervision(EhmError):
    """Exception raised when a loss term lacks the ground truth it needs."""

    pass


class NoActiveTerms(EhmError):
    """Exception raised when no loss term can be evaluated."""

    pass


class EmptyProjection(EhmError):
    """Exception raised when no mesh vertex projects in front of the camera."""

    pass


class DivergenceDetected(EhmError):
    """Exception raised when a fit's loss explodes.

    The diverging stage report is attached to the context under ``stage``.
    """

    pass


class MissingPart(EhmError):
    """A part-level refinement step has no keypoints for its part.

    Refinement records this instead of raising it; it exists so that the
    skip reason has a stable type name in reports.
    """

    pass


class DegenerateInput(EhmError):
    """Exception raised when point sets cannot define an alignment."""

    pass


class BadRegion(EhmError):
    """Exception raised when a vertex region references missing vertices."""

    pass


class ConfigurationError(EhmError):
    """Exception raised when configuration or command usage is invalid.

    This exception is raised when JSON documents fail validation or when
    command-line flags are inconsistent.
    """

    pass


class GradCheckFailed(EhmError):
    """Exception raised when analytic and numeric gradients disagree."""

    pass
