"""Primal-dual splitting (Chambolle-Pock type) in finite-dimensional Banach spaces."""
from ._kernels import BACKEND
from .spaces import SobolevPeriodic, WeightedLr, conjugate_exponent, convexity_constant

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "SobolevPeriodic",
    "WeightedLr",
    "conjugate_exponent",
    "convexity_constant",
    "__version__",
]
