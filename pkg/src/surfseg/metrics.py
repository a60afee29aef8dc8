"""Surface and region evaluation metrics: UMSP, Jaccard, PAD, Hausdorff."""

from __future__ import annotations

import numpy as np

from surfseg.core import InputError, LengthMismatch, PixelSpacing, SurfaceTrace


class EmptyRegion(InputError):
    pass


class ExtentMismatch(InputError):
    pass


def _x(t):
    return t.x if isinstance(t, SurfaceTrace) else np.asarray(t, dtype=np.float64)


def umsp(pred, truth, spacing: PixelSpacing | None = None) -> float:
    """Unsigned mean surface positioning error in physical units."""
    p, t = _x(pred), _x(truth)
    if p.shape != t.shape:
        raise LengthMismatch(f"{p.size} vs {t.size} columns")
    s = spacing.row_spacing if spacing is not None else 1.0
    return float(np.mean(np.abs(p - t)) * s)


def contour_to_mask(points, extent) -> np.ndarray:
    """Rasterise a closed polygon of ``(x, y)`` points by the even-odd rule.

    A pixel belongs to the region iff its centre ``(col, row)`` is inside;
    centres lying exactly on an edge count as inside.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
        raise InputError("polygon needs at least 3 (x, y) points")
    xs, ys = pts[:, 0], pts[:, 1]
    area = 0.5 * abs(np.dot(xs, np.roll(ys, -1)) - np.dot(ys, np.roll(xs, -1)))
    if area == 0:
        raise EmptyRegion("polygon has zero area")
    h, w = extent
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    inside = np.zeros((h, w), dtype=bool)
    on_edge = np.zeros((h, w), dtype=bool)
    x0, y0 = xs, ys
    x1, y1 = np.roll(xs, -1), np.roll(ys, -1)
    for ax, ay, bx, by in zip(x0, y0, x1, y1):
        crosses = (ay > yy) != (by > yy)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = ax + (yy - ay) * (bx - ax) / (by - ay)
        inside ^= crosses & (xx < xint)
        cross = (bx - ax) * (yy - ay) - (by - ay) * (xx - ax)
        within = ((xx >= min(ax, bx)) & (xx <= max(ax, bx))
                  & (yy >= min(ay, by)) & (yy <= max(ay, by)))
        on_edge |= (np.abs(cross) <= 1e-12 * max(1.0, abs(bx - ax) + abs(by - ay))) & within
    return inside | on_edge


def terrain_contour(x) -> np.ndarray:
    """Polygon enclosing the rows above (and on) a terrain surface."""
    pts = terrain_points(x)
    return np.vstack([pts, [[pts[-1, 0], -1.0], [0.0, -1.0]]])


def terrain_points(x) -> np.ndarray:
    x = _x(x)
    return np.stack([np.arange(x.size, dtype=np.float64), x], axis=1)


def jaccard(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ExtentMismatch(f"{a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def pad(a: np.ndarray, b_truth: np.ndarray) -> float:
    """Percentage of area difference, as a fraction of the truth area."""
    truth_area = np.count_nonzero(b_truth)
    if truth_area == 0:
        raise EmptyRegion("truth region is empty")
    return abs(np.count_nonzero(a) - truth_area) / truth_area


def hausdorff(a, b, spacing: PixelSpacing | None = None) -> float:
    """Symmetric Hausdorff distance between two point sets (exact, pairwise)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    if not len(a) or not len(b):
        raise EmptyRegion("Hausdorff distance needs two non-empty point sets")
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    s = spacing.row_spacing if spacing is not None else 1.0
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()) * s)
