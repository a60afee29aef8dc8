"""Polar/Cartesian resampling and data augmentation.

Cartesian points are ``(x, y) = (column, row)``. A polar image has one row per
radius and one column per angle, so ring-shaped boundaries become
terrain-like surfaces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from surfseg.core import Grid2, InputError, Kind, SurfaceTrace
from surfseg.synth import STREAM_AUGMENT, rng


@dataclass(frozen=True)
class PolarSpec:
    cx: float
    cy: float
    n_angles: int = 256
    n_radii: int = 128
    r_max: float = 64.0
    wrap: bool = False

    def __post_init__(self):
        if self.n_angles < 2 or self.n_radii < 2 or not self.r_max > 0:
            raise InputError("PolarSpec needs n_angles, n_radii >= 2 and r_max > 0")

    @classmethod
    def centered(cls, shape, n_angles=256, n_radii=128, r_max=None, wrap=False) -> "PolarSpec":
        h, w = shape
        if r_max is None:
            r_max = min(h, w) / 2.0
        return cls((w - 1) / 2.0, (h - 1) / 2.0, n_angles, n_radii, r_max, wrap)

    def radii(self) -> np.ndarray:
        return (np.arange(self.n_radii) + 0.5) * self.r_max / self.n_radii

    def angles(self) -> np.ndarray:
        return 2.0 * math.pi * np.arange(self.n_angles) / self.n_angles

    @property
    def extent(self) -> tuple[int, int]:
        """Cartesian (rows, cols) for which this spec is the centred default."""
        return int(round(2 * self.cy + 1)), int(round(2 * self.cx + 1))


def bilinear(img: np.ndarray, x, y) -> np.ndarray:
    """Sample ``img`` at fractional (x, y); outside points take the border value."""
    h, w = img.shape
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, w - 1.0)
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, h - 1.0)
    x0 = np.minimum(np.floor(x).astype(int), w - 2) if w > 1 else np.zeros_like(x, dtype=int)
    y0 = np.minimum(np.floor(y).astype(int), h - 2) if h > 1 else np.zeros_like(y, dtype=int)
    fx = x - x0
    fy = y - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def to_polar(img: Grid2, spec: PolarSpec) -> Grid2:
    r = spec.radii()[:, None]
    th = spec.angles()[None, :]
    out = bilinear(img.data, spec.cx + r * np.cos(th), spec.cy + r * np.sin(th))
    return Grid2(out, img.kind)


def from_polar(polar: Grid2, spec: PolarSpec, shape=None) -> Grid2:
    """Resample a polar image back onto a Cartesian grid (periodic in angle)."""
    h, w = shape if shape is not None else spec.extent
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - spec.cx, yy - spec.cy
    rad = np.hypot(dx, dy)
    ang = np.mod(np.arctan2(dy, dx), 2 * math.pi)
    jj = np.clip(rad * spec.n_radii / spec.r_max - 0.5, 0.0, spec.n_radii - 1.0)
    ii = ang * spec.n_angles / (2 * math.pi)
    # periodic in angle: pad one wrapped column so interpolation crosses 2*pi
    data = np.concatenate([polar.data, polar.data[:, :1]], axis=1)
    return Grid2(bilinear(data, ii, jj), polar.kind)


def surface_to_contour(x, spec: PolarSpec) -> np.ndarray:
    """Closed Cartesian contour ``(n_angles, 2)`` of a polar surface trace."""
    x = x.x if isinstance(x, SurfaceTrace) else np.asarray(x, dtype=np.float64)
    r = (x + 0.5) * spec.r_max / spec.n_radii
    th = spec.angles()
    return np.stack([spec.cx + r * np.cos(th), spec.cy + r * np.sin(th)], axis=1)


# -- augmentation -------------------------------------------------------------

OPS = ("mirror", "circ_shift", "gaussian_noise", "salt_pepper", "crop_resize", "axial_translate")
GEOMETRIC_OPS = ("mirror", "circ_shift", "crop_resize", "axial_translate")


@dataclass
class Augmented:
    image: Grid2
    truth: SurfaceTrace
    flags: dict = field(default_factory=dict)


def _parse(op):
    if isinstance(op, str):
        name, arg = op, None
    elif isinstance(op, dict):
        name, arg = op["op"], op.get("value")
    else:
        name, arg = op[0], (op[1] if len(op) > 1 else None)
    if name not in OPS:
        raise InputError(f"unknown augmentation '{name}'")
    return name, arg


def augment(image: Grid2, truth: SurfaceTrace, ops, seed: int = 0) -> Augmented:
    """Apply ``ops`` in order, keeping image and truth consistent.

    Ops are names or ``(name, value)`` pairs; a missing value for
    ``circ_shift``/``axial_translate`` draws a random shift.
    """
    r = rng(seed, STREAM_AUGMENT)
    img = image.data.copy()
    t = truth.x.copy()
    n_rows, n_cols = img.shape
    flags = {"truth_clipped": False, "altered": 0}
    for op in ops:
        name, arg = _parse(op)
        if name == "mirror":
            img, t = img[:, ::-1].copy(), t[::-1].copy()
        elif name == "circ_shift":
            k = int(r.integers(0, n_cols)) if arg is None else int(arg)
            img, t = np.roll(img, k, axis=1), np.roll(t, k)
        elif name == "axial_translate":
            d = int(r.integers(-(n_rows // 10), n_rows // 10 + 1)) if arg is None else int(arg)
            img, t = np.roll(img, d, axis=0), t + d
        elif name == "gaussian_noise":
            std = 0.1 if arg is None else float(arg)
            img = img + r.normal(0.0, std, img.shape)
        elif name == "salt_pepper":
            frac = 0.05 if arg is None else float(arg)
            hit = r.random(img.shape) < frac
            salt = r.random(img.shape) < 0.5
            lo, hi = img.min(), img.max()
            img = np.where(hit, np.where(salt, hi, lo), img)
            flags["altered"] += int(hit.sum())
        elif name == "crop_resize":
            img, t = _crop_resize(img, t, 0.9 if arg is None else float(arg), r)
        clipped = (t < 0) | (t > n_rows - 1)
        if clipped.any():
            flags["truth_clipped"] = True
            t = np.clip(t, 0.0, n_rows - 1.0)
    return Augmented(Grid2(img, image.kind), SurfaceTrace(t), flags)


def _crop_resize(img, t, frac, r):
    n_rows, n_cols = img.shape
    h = max(2, int(round(frac * n_rows)))
    w = max(2, int(round(frac * n_cols)))
    r0 = int(r.integers(0, n_rows - h + 1))
    c0 = int(r.integers(0, n_cols - w + 1))
    # align-corners mapping of the crop onto the full grid
    src_rows = r0 + np.arange(n_rows) * (h - 1) / (n_rows - 1)
    src_cols = c0 + np.arange(n_cols) * (w - 1) / max(n_cols - 1, 1)
    out = bilinear(img, src_cols[None, :], src_rows[:, None])
    t_src = np.interp(src_cols, np.arange(n_cols), t)
    return out, (t_src - r0) * (n_rows - 1) / (h - 1)


def resize(img: Grid2, shape) -> Grid2:
    h, w = shape
    rows = np.arange(h) * (img.n_rows - 1) / max(h - 1, 1)
    cols = np.arange(w) * (img.n_cols - 1) / max(w - 1, 1)
    return Grid2(bilinear(img.data, cols[None, :], rows[:, None]), img.kind)


def normalize_intensity(img: Grid2, mode: str = "zscore") -> Grid2:
    """Per-slice intensity normalisation: ``zscore`` or ``minmax`` to [-1, 1]."""
    d = img.data
    if mode == "zscore":
        sd = d.std()
        out = (d - d.mean()) / (sd if sd > 0 else 1.0)
    elif mode == "minmax":
        span = d.max() - d.min()
        out = 2.0 * (d - d.min()) / (span if span > 0 else 1.0) - 1.0
    else:
        raise InputError(f"unknown normalisation '{mode}'")
    return Grid2(out, Kind.IMAGE)
