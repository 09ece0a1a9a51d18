"""Local volatility surface calibration from option-price data."""

from .grid import (
    A_FLOOR,
    MeshSpec,
    MeshError,
    ObservationError,
    ObservationOperator,
    ObservationSet,
    PriceSurface,
    VarianceSurface,
    build_mesh,
    build_observation_operator,
)
from .forward import ForwardParams, ForwardSolveError, predict_data, solve_forward

__all__ = [
    "A_FLOOR",
    "MeshSpec",
    "MeshError",
    "ObservationError",
    "ObservationOperator",
    "ObservationSet",
    "PriceSurface",
    "VarianceSurface",
    "build_mesh",
    "build_observation_operator",
    "ForwardParams",
    "ForwardSolveError",
    "predict_data",
    "solve_forward",
]
