"""Simulation of pulsed optomechanical position measurements.

Submodules: ``hilbert`` (number-basis states), ``gaussian`` (moment path),
``pulse_dynamics`` (cavity response to a drive envelope), ``measurement``
(the pulse measurement operator), ``tomography``, ``protocol`` and ``cli``.
"""
from .errors import (
    ConfigError,
    GridError,
    MissingMeanError,
    NoOscillationError,
    NoPositionInformation,
    OptomechError,
    RegimeError,
    TruncationError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "GridError",
    "MissingMeanError",
    "NoOscillationError",
    "NoPositionInformation",
    "OptomechError",
    "RegimeError",
    "TruncationError",
    "__version__",
]
