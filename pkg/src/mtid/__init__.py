"""Masked temporal interpolation diffusion for procedure planning.

Generates intermediate action sequences between a start and goal observation
with a conditional diffusion model guided by interpolated latent features.
"""

__version__ = "0.1.0"

from .denoiser import MatrixLayout
from .pipeline import ModelConfig, PlannerModels, TrainConfig, build_models
from .synthworld import WorldSpec, build_dataset

__all__ = [
    "MatrixLayout",
    "ModelConfig",
    "PlannerModels",
    "TrainConfig",
    "WorldSpec",
    "build_dataset",
    "build_models",
]
