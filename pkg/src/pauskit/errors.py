"""Exception types shared across the toolkit."""


class PauskitError(Exception):
    """Base class for toolkit-specific failures."""


class CalibrationError(PauskitError):
    """Raised when a tube-pair calibration cannot be computed."""


class NoSignalError(PauskitError):
    """Raised when no pixel exceeds the detection threshold."""


class SingularityError(PauskitError):
    """Raised when a field is evaluated too close to a source point."""


class SidecarMismatchError(PauskitError):
    """Raised when persisted data disagrees with its sidecar metadata."""
