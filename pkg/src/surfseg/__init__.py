"""Globally optimal terrain-surface segmentation with a learnable smoothness prior."""

from surfseg._backend import BACKEND
from surfseg.core import (
    GaussianField,
    Grid2,
    Kind,
    PixelSpacing,
    SurfaceTrace,
    argmax_surface,
    column_normalize,
    validate_probmap,
)
from surfseg.d2c import fit_column, fit_field
from surfseg.smoothing import assemble, backward, energy, solve

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "GaussianField", "Grid2", "Kind", "PixelSpacing", "SurfaceTrace",
    "argmax_surface", "assemble", "backward", "column_normalize", "energy",
    "fit_column", "fit_field", "solve", "validate_probmap",
]
