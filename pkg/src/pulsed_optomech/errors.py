"""Exception types shared across the package."""


class OptomechError(Exception):
    """Base class for all package errors."""


class TruncationError(OptomechError):
    """Raised when a Fock truncation cannot hold the state to the required accuracy."""


class GridError(OptomechError):
    """Raised when a sampling grid is too narrow or too coarse for the state."""


class RegimeError(OptomechError):
    """Raised when parameters fall outside the validity range of an approximation."""


class ConfigError(OptomechError):
    """Raised for malformed configuration files or descriptors."""


class NoPositionInformation(OptomechError):
    """Raised when chi = 0 so the outcome record carries no position information."""


class NoOscillationError(OptomechError):
    """Raised when a marginal has no interference fringes to analyse."""


class MissingMeanError(OptomechError):
    """Raised when outcome compensation is requested without a known conditional mean."""
