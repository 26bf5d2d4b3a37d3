"""Exception types raised across the package."""


class EvrotError(Exception):
    """Base class for all errors raised by evrot."""


class InvalidRotationError(EvrotError, ValueError):
    """A matrix failed the orthonormality / determinant check."""


class UndistortionError(EvrotError, ArithmeticError):
    """Fixed-point undistortion did not reach tolerance in its iteration budget."""


class ProjectionError(EvrotError, ValueError):
    """A direction cannot be projected (behind the camera, or at a cylinder pole)."""


class ParseError(EvrotError, ValueError):
    """Malformed text input. ``lineno`` is 1-based, or None when not line-specific."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class ConfigError(EvrotError, ValueError):
    """A configuration value violates its invariant; ``field`` names it."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DegenerateGeometryError(EvrotError, ArithmeticError):
    """The Gauss-Newton normal matrix is rank deficient.

    ``null_direction`` is the unit so(3) direction the correspondences fail to
    constrain (eigenvector of the smallest eigenvalue of H).
    """

    def __init__(self, message, null_direction=None, condition=None):
        self.null_direction = null_direction
        self.condition = condition
        super().__init__(message)


class AlignmentError(EvrotError, RuntimeError):
    """No inlier correspondences survived gating in an ICP iteration."""


class RunError(EvrotError, RuntimeError):
    """Run-level pipeline failure (e.g. too many frames failed to align)."""


class SimulationError(EvrotError, RuntimeError):
    """The simulator produced no events (scene never visible, or no motion)."""
