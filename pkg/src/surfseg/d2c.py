"""Discrete-to-continuous conversion: fit a Gaussian to each probability column.

Each column is fitted by weighted least squares on its log values,
``ln f(j) ~ a + b j + c j**2`` with weights ``f(j)**2``, from which
``gamma = -b / 2c`` and ``sigma = sqrt(-1 / 2c)``. Internally the row index is
centred on the column peak and scaled by the support half-width so the 3x3
normal equations stay well conditioned; the fitted Gaussian is unchanged by
that reparametrisation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from surfseg._backend import kernels
from surfseg.core import GaussianField, Grid2, validate_probmap

DEFAULT_TAU = 1e-3
C_MIN = 1e-12
PIVOT_TOL = 1e-12
SIGMA_DEFAULT_REL = 0.1


@dataclass(frozen=True)
class LogQuadraticFit:
    a: float
    b: float
    c: float


@dataclass(frozen=True)
class FitReport:
    gamma: float
    sigma: float
    fallback_used: bool
    weighted_residual: float
    coef: LogQuadraticFit


@dataclass
class FieldFit:
    """Everything the forward pass knows, kept for the backward pass."""

    gamma: np.ndarray
    sigma: np.ndarray
    fallback: np.ndarray
    residual: np.ndarray
    coef: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    normalized: np.ndarray
    lo: np.ndarray
    span: np.ndarray
    tau: float

    @property
    def field(self) -> GaussianField:
        return GaussianField(self.gamma, self.sigma)

    def reports(self) -> list[FitReport]:
        return [
            FitReport(float(self.gamma[i]), float(self.sigma[i]), bool(self.fallback[i]),
                      float(self.residual[i]), LogQuadraticFit(*map(float, self.coef[i])))
            for i in range(self.gamma.size)
        ]


def _fit(f: np.ndarray, tau: float):
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    f = np.ascontiguousarray(f, dtype=np.float64)
    return kernels.fit_columns(f, float(tau), C_MIN, PIVOT_TOL, SIGMA_DEFAULT_REL * f.shape[0])


def fit_column(f, tau: float = DEFAULT_TAU) -> FitReport:
    f = np.asarray(f, dtype=np.float64).reshape(-1, 1)
    g, s, fb, res, coef, _, _ = _fit(f, tau)
    return FitReport(float(g[0]), float(s[0]), bool(fb[0]), float(res[0]),
                     LogQuadraticFit(*map(float, coef[0])))


def fit_map(p: np.ndarray, tau: float = DEFAULT_TAU) -> FieldFit:
    """Normalise each column of ``p`` to [0, 1] and fit it.

    Constant columns cannot be normalised; they are zeroed, which routes them
    to the fallback instead of aborting the whole map.
    """
    p = np.asarray(p, dtype=np.float64)
    lo = p.min(axis=0)
    span = p.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    f = np.where(span > 0, (p - lo) / safe, 0.0)
    g, s, fb, res, coef, center, scale = _fit(f, tau)
    return FieldFit(g, s, fb.astype(bool), res, coef, center, scale, f, lo, span, tau)


def fit_field(p: Grid2, tau: float = DEFAULT_TAU) -> tuple[GaussianField, list[FitReport]]:
    validate_probmap(p)
    fit = fit_map(p.data, tau)
    return fit.field, fit.reports()


def fit_backward(fit: FieldFit, g_gamma, g_sigma) -> np.ndarray:
    """Pull gradients on (gamma, sigma) back to the un-normalised map.

    Fallback columns contribute nothing. The retained-sample set and the
    min/max locations are treated as locally constant.
    """
    g_gamma = np.asarray(g_gamma, dtype=np.float64)
    g_sigma = np.asarray(g_sigma, dtype=np.float64)
    f = fit.normalized
    n_rows, n_cols = f.shape
    g_p = np.zeros_like(f)
    rows = np.arange(n_rows, dtype=np.float64)
    for i in np.flatnonzero(~fit.fallback):
        if g_gamma[i] == 0.0 and g_sigma[i] == 0.0:
            continue
        col = f[:, i]
        keep = (col >= fit.tau * col.max()) & (col > 0)
        fk = col[keep]
        u = (rows[keep] - fit.center[i]) / fit.scale[i]
        phi = np.stack([np.ones_like(u), u, u * u], axis=1)
        w = fk * fk
        m = phi.T @ (w[:, None] * phi)
        th = np.linalg.solve(m, phi.T @ (w * np.log(fk)))
        _, b, c = th
        s = fit.scale[i]
        d_b = g_gamma[i] * (-s / (2 * c))
        d_c = g_gamma[i] * (s * b / (2 * c * c)) + g_sigma[i] * s * (-2 * c) ** -1.5
        lam = np.linalg.solve(m, np.array([0.0, d_b, d_c]))
        r = np.log(fk) - phi @ th
        g_f = np.zeros(n_rows)
        g_f[keep] = fk * (2 * r + 1) * (phi @ lam)
        # f = (p - lo) / span with lo, span taken at fixed argmin/argmax rows
        span = fit.span[i]
        gp = g_f / span
        gp[np.argmin(col)] += np.sum(g_f * (col - 1)) / span
        gp[np.argmax(col)] -= np.sum(g_f * col) / span
        g_p[:, i] = gp
    return g_p

