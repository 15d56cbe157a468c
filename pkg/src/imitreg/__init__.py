"""Retinal image registration by imitating landmark displacements.

A small numpy toolkit: fixed preprocessing operators (histogram
equalization with LoG, guided filter with Frangi vesselness), patch-based
observation encoding, a multi-task regressor trained with hand-written
backpropagation and Adam, transform fitting, TRE evaluation protocols, FIRE
dataset I/O and a synthetic fundus generator.
"""
from .core import Affine2D, Category, ImagePair, affine_apply, affine_compose, affine_invert
from .errors import ConfigError, DataError, ImitregError, NumericError
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = [
    "Affine2D", "Category", "ImagePair", "affine_apply", "affine_compose", "affine_invert",
    "ConfigError", "DataError", "ImitregError", "NumericError", "KERNEL_BACKEND", "__version__",
]
