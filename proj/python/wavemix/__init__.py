"""WaveMix image classifiers with a C++ core."""

from ._core import (
    Model,
    NumericalError,
    ShapeError,
    __version__,
    compute_levels,
    count_params,
    dwt2_level,
    dwt2_pyramid,
    dwt_roundtrip,
    idwt2_level,
    train,
)

__all__ = [
    "Model",
    "NumericalError",
    "ShapeError",
    "__version__",
    "compute_levels",
    "count_params",
    "dwt2_level",
    "dwt2_pyramid",
    "dwt_roundtrip",
    "idwt2_level",
    "train",
]
