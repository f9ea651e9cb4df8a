from .rng import Purpose, RngStream, stream_key
from .thinning import (
    AffineDrift,
    Drift,
    IntensityPath,
    NonFiniteIntensityError,
    RK4Drift,
    ThinningBoundError,
    affine_advance,
    affine_integral,
    integrate_drift,
    next_event_thinning,
)

__all__ = [
    "AffineDrift",
    "Drift",
    "IntensityPath",
    "NonFiniteIntensityError",
    "Purpose",
    "RK4Drift",
    "RngStream",
    "ThinningBoundError",
    "affine_advance",
    "affine_integral",
    "integrate_drift",
    "next_event_thinning",
    "stream_key",
]
