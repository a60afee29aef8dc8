"""Inference pipeline: unary map -> Gaussian fit -> smoothing solve."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from surfseg import d2c, smoothing
from surfseg.core import GaussianField, Grid2, Kind, validate_probmap


@dataclass
class Prediction:
    x: np.ndarray
    fit: d2c.FieldFit
    probmap: np.ndarray
    w: float | None
    timings: dict = field(default_factory=dict)

    @property
    def gamma(self) -> np.ndarray:
        return self.fit.gamma


def infer(model, image, w: float | None, tau: float = d2c.DEFAULT_TAU, wrap: bool = False) -> Prediction:
    """Run the full pipeline on one image; ``w=None`` skips the smoothing block."""
    img = image.data if isinstance(image, Grid2) else np.asarray(image, dtype=np.float64)
    t0 = time.perf_counter()
    p, _ = model.forward(img)
    t1 = time.perf_counter()
    fit = d2c.fit_map(validate_probmap(Grid2(p, Kind.PROBMAP)).data, tau)
    t2 = time.perf_counter()
    if w is None:
        x = fit.gamma.copy()
    else:
        x = smoothing.smooth(GaussianField(fit.gamma, fit.sigma), w, wrap).x
    t3 = time.perf_counter()
    return Prediction(x, fit, p, w, {"predictor": t1 - t0, "d2c": t2 - t1, "sb": t3 - t2})
