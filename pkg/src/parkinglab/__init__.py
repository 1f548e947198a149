"""parkinglab: simulator and verification lab for the parking model on Z^d."""

__version__ = "0.1.0"

from .realization import (
    CAR,
    SPOT,
    DomainError,
    ModelParams,
    RealizationSource,
    Torus,
    TruncatedBox,
)

__all__ = [
    "CAR",
    "SPOT",
    "DomainError",
    "ModelParams",
    "RealizationSource",
    "Torus",
    "TruncatedBox",
    "__version__",
]
