"""Quadratic surface smoothing solved exactly in one tridiagonal solve.

Energy over a chain of columns::

    E(x) = sum_i (x_i - gamma_i)**2 / (2 sigma_i**2) + w * sum_i (x_{i+1} - x_i)**2
         = 1/2 x^T H x - (D gamma)^T x + const,   H = D + 2 w L

with ``D = diag(1 / sigma**2)`` and ``L`` the chain graph Laplacian. ``H`` is
strictly diagonally dominant for ``w >= 0`` (Gershgorin), so the minimiser
``x* = H^-1 D gamma`` is unique and Thomas elimination needs no pivoting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from surfseg._backend import kernels
from surfseg.core import GaussianField, InputError, LengthMismatch, NumericalError, SurfaceTrace

RESIDUAL_TOL = 1e-9


class NonPositiveSigma(InputError):
    def __init__(self, i):
        super().__init__(f"sigma[{i}] must be positive")
        self.index = i


class NegativeWeight(InputError):
    pass


class SolveFailure(NumericalError):
    pass


@dataclass(frozen=True)
class SmoothSystem:
    diag: np.ndarray
    off: np.ndarray
    rhs: np.ndarray
    w: float
    precision: np.ndarray
    wrap: bool = False
    gamma: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.diag.size

    @property
    def closed(self) -> bool:
        # a ring needs at least three columns to differ from a chain
        return self.wrap and self.n >= 3

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = self.diag * x
        y[:-1] += self.off * x[1:]
        y[1:] += self.off * x[:-1]
        if self.closed:
            y[0] += -2.0 * self.w * x[-1]
            y[-1] += -2.0 * self.w * x[0]
        return y

    def dense(self) -> np.ndarray:
        h = np.diag(self.diag)
        idx = np.arange(self.n - 1)
        h[idx, idx + 1] = h[idx + 1, idx] = self.off
        if self.closed:
            h[0, -1] = h[-1, 0] = -2.0 * self.w
        return h


@dataclass(frozen=True)
class SmoothGradients:
    d_gamma: np.ndarray
    d_sigma: np.ndarray
    d_w: float


def laplacian(x, wrap: bool = False) -> np.ndarray:
    """Apply the chain (or ring) graph Laplacian."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    d = np.diff(x)
    out[:-1] -= d
    out[1:] += d
    if wrap and x.size >= 3:
        e = x[0] - x[-1]
        out[0] += e
        out[-1] -= e
    return out


def assemble(gf: GaussianField, w: float, wrap: bool = False) -> SmoothSystem:
    sigma = gf.sigma
    bad = np.flatnonzero(~(sigma > 0) | ~np.isfinite(sigma))
    if bad.size:
        raise NonPositiveSigma(int(bad[0]))
    w = float(w)
    if not w >= 0 or not np.isfinite(w):
        raise NegativeWeight(f"smoothness weight must be finite and >= 0, got {w}")
    n = sigma.size
    prec = 1.0 / sigma**2
    degree = np.zeros(n)
    degree[:-1] += 1
    degree[1:] += 1
    if wrap and n >= 3:
        degree[0] += 1
        degree[-1] += 1
    diag = prec + 2.0 * w * degree
    off = np.full(n - 1, -2.0 * w)
    return SmoothSystem(diag, off, prec * gf.gamma, w, prec, bool(wrap), gf.gamma.copy())


def energy(sys: SmoothSystem, gf: GaussianField, x: SurfaceTrace) -> float:
    x = x.x if isinstance(x, SurfaceTrace) else np.asarray(x, dtype=np.float64)
    if x.size != gf.n_cols or x.size != sys.n:
        raise LengthMismatch("surface, field and system lengths differ")
    unary = np.sum((x - gf.gamma) ** 2 / (2.0 * gf.sigma**2))
    pair = np.sum(np.diff(x) ** 2)
    if sys.closed:
        pair += (x[0] - x[-1]) ** 2
    return float(unary + sys.w * pair)


def _solve_raw(sys: SmoothSystem, rhs: np.ndarray) -> np.ndarray:
    try:
        if not sys.closed:
            return kernels.tridiag_solve(sys.diag, sys.off, rhs)
        # Sherman-Morrison: ring = chain + rank-one corner correction
        beta = -2.0 * sys.w
        g = -sys.diag[0]
        diag = sys.diag.copy()
        diag[0] -= g
        diag[-1] -= beta * beta / g
        u = np.zeros(sys.n)
        u[0], u[-1] = g, beta
        y = kernels.tridiag_solve(diag, sys.off, rhs)
        z = kernels.tridiag_solve(diag, sys.off, u)
        v0, vn = 1.0, beta / g
        factor = (v0 * y[0] + vn * y[-1]) / (1.0 + v0 * z[0] + vn * z[-1])
        return y - factor * z
    except FloatingPointError as exc:
        raise SolveFailure(str(exc)) from exc


def _check_residual(sys: SmoothSystem, x, rhs) -> None:
    # normwise backward-error form: rounding x alone leaves ~eps*|H||x|, which
    # dwarfs |rhs| once w >> 1/sigma**2
    if not rhs.size:
        return
    h_norm = np.max(np.abs(sys.diag)) + 4.0 * abs(sys.w)
    scale = h_norm * np.max(np.abs(x)) + np.max(np.abs(rhs))
    resid = np.max(np.abs(sys.matvec(x) - rhs))
    if not np.all(np.isfinite(x)) or resid > RESIDUAL_TOL * scale:
        raise SolveFailure(f"residual {resid:.3e} exceeds {RESIDUAL_TOL:g} * {scale:.3e}")


def solve(sys: SmoothSystem) -> SurfaceTrace:
    """Return the unique minimiser of the smoothing energy."""
    g = sys.gamma
    # closed forms: H = D when w = 0, and L g = 0 when gamma is constant
    if g is not None and g.size and (sys.w == 0.0 or np.all(g == g[0])):
        return SurfaceTrace(g.copy())
    x = _solve_raw(sys, sys.rhs)
    _check_residual(sys, x, sys.rhs)
    return SurfaceTrace(x)


def ldl_pivots(sys: SmoothSystem) -> np.ndarray:
    """Pivots of the LDL^T factorisation of the chain Hessian."""
    if sys.closed:
        try:
            return np.diag(np.linalg.cholesky(sys.dense())) ** 2
        except np.linalg.LinAlgError as exc:
            raise SolveFailure("ring Hessian is not positive definite") from exc
    return kernels.ldl_pivots(sys.diag, sys.off)


def backward(sys: SmoothSystem, gf: GaussianField, x_star: SurfaceTrace, g_up) -> SmoothGradients:
    """Gradients of a scalar loss through ``H x* = D gamma``.

    With the adjoint ``y = H^-1 dL/dx*``::

        dL/dgamma_i = y_i / sigma_i**2
        dL/dsigma_i = 2 y_i (x*_i - gamma_i) / sigma_i**3
        dL/dw       = -2 y^T L x*
    """
    g_up = np.asarray(g_up, dtype=np.float64)
    x = x_star.x if isinstance(x_star, SurfaceTrace) else np.asarray(x_star, dtype=np.float64)
    if g_up.size != sys.n or x.size != sys.n:
        raise LengthMismatch("gradient and system lengths differ")
    if not np.any(g_up):
        zero = np.zeros(sys.n)
        return SmoothGradients(zero, zero.copy(), 0.0)
    y = _solve_raw(sys, g_up)
    d_gamma = y * sys.precision
    d_sigma = 2.0 * y * (x - gf.gamma) / gf.sigma**3
    d_w = -2.0 * float(y @ laplacian(x, sys.closed))
    return SmoothGradients(d_gamma, d_sigma, d_w)


def smooth(gf: GaussianField, w: float, wrap: bool = False) -> SurfaceTrace:
    return solve(assemble(gf, w, wrap))
