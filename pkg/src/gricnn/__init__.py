"""Geared rotationally identical CNNs (SSK, SNK, GSK, GNK) and their consistency harness."""
from .gri import GearConfig, GriModel, build_model, forward_gri, train_gri
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "GearConfig", "GriModel", "build_model", "forward_gri", "train_gri", "__version__"]
