"""Exception hierarchy shared across the package."""


class BiphotonError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(BiphotonError):
    """Invalid configuration or parameter values."""


class DataError(BiphotonError):
    """Malformed input data: bad files, unsorted streams, mismatched binning."""

    def __init__(self, message, byte_offset=None):
        super().__init__(message)
        self.byte_offset = byte_offset


class NumericalError(BiphotonError):
    """A numerical procedure failed: singular system, no convergence,
    too many invalid bins."""


class InvalidBinError(NumericalError):
    """A single coincidence bin cannot be inverted (negative radicand
    beyond tolerance, or vanishing reference amplitude)."""
