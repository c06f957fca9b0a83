"""ToF-noise-aware hair segmentation toolkit.

Simulates continuous-wave ToF correlation imaging of skin and hair, turns the
resulting depth noise into variance maps and HVA feature channels, and refines
externally supplied segmentation unaries with a dense CRF that uses those
features.
"""

from tofhair.errors import (
    ConfigError,
    DataError,
    DegenerateSignalError,
    EmptyRegionError,
    InvalidArgumentError,
    SizeCapError,
    TofHairError,
    UnfillableRegionError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DegenerateSignalError",
    "EmptyRegionError",
    "InvalidArgumentError",
    "SizeCapError",
    "TofHairError",
    "UnfillableRegionError",
]
