"""Numerical potential theory for anisotropic stable operators."""

from .measures import (LevyMeasureView, ModelError, ShrinkingBalls,
                       SpectralMeasure, StableModel, sample_directions)
from .exponent import ExponentEvaluator, phi_eval
from .density import (DensityError, build_density_grid, check_decay_bound,
                      density_at, load_grid, load_or_build)

__all__ = [
    "LevyMeasureView",
    "ModelError",
    "ShrinkingBalls",
    "SpectralMeasure",
    "StableModel",
    "sample_directions",
    "ExponentEvaluator",
    "phi_eval",
    "DensityError",
    "build_density_grid",
    "check_decay_bound",
    "density_at",
    "load_grid",
    "load_or_build",
]

__version__ = "0.1.0"
