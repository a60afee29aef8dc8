"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and the same summation order per column, so results agree
with the compiled path to rounding.
"""

import math

import numpy as np

BACKEND = "python"


def tridiag_solve(diag, off, rhs):
    """Solve a symmetric tridiagonal system by the Thomas recurrence."""
    d = diag.tolist()
    e = off.tolist()
    r = rhs.tolist()
    n = len(d)
    if n == 0:
        return np.empty(0)
    cp = [0.0] * n
    x = [0.0] * n
    denom = d[0]
    if not (denom > 0.0) or not math.isfinite(denom):
        raise FloatingPointError("non-positive pivot at 0")
    if n > 1:
        cp[0] = e[0] / denom
    x[0] = r[0] / denom
    for i in range(1, n):
        denom = d[i] - e[i - 1] * cp[i - 1]
        if not (denom > 0.0) or not math.isfinite(denom):
            raise FloatingPointError(f"non-positive pivot at {i}")
        if i < n - 1:
            cp[i] = e[i] / denom
        x[i] = (r[i] - e[i - 1] * x[i - 1]) / denom
    for i in range(n - 2, -1, -1):
        x[i] -= cp[i] * x[i + 1]
    return np.array(x)


def ldl_pivots(diag, off):
    d = diag.tolist()
    e = off.tolist()
    piv = d[:1]
    for i in range(1, len(d)):
        piv.append(d[i] - e[i - 1] * e[i - 1] / piv[i - 1])
    return np.array(piv, dtype=np.float64)


def _solve3(m, v, pivot_tol):
    a = [list(m[3 * i:3 * i + 3]) + [v[i]] for i in range(3)]
    big = max(abs(x) for row in a for x in row[:3])
    if big == 0.0:
        return None
    for k in range(3):
        p = max(range(k, 3), key=lambda i: abs(a[i][k]))
        if abs(a[p][k]) <= pivot_tol * big:
            return None
        a[k], a[p] = a[p], a[k]
        for i in range(k + 1, 3):
            f = a[i][k] / a[k][k]
            for j in range(k, 4):
                a[i][j] -= f * a[k][j]
    out = [0.0, 0.0, 0.0]
    for i in range(2, -1, -1):
        t = a[i][3]
        for j in range(i + 1, 3):
            t -= a[i][j] * out[j]
        out[i] = t / a[i][i]
    return out


def _fit_one(col, n_rows, tau, c_min, pivot_tol):
    jmax = int(np.argmax(col))
    fmax = float(col[jmax])
    if not fmax > 0.0:
        return None
    keep = np.flatnonzero((col >= tau * fmax) & (col > 0.0))
    if keep.size < 3:
        return None
    s = float(max(keep[-1] - jmax, jmax - keep[0], 1))
    fs = col[keep].tolist()
    us = ((keep - jmax) / s).tolist()
    s0 = s1 = s2 = s3 = s4 = t0 = t1 = t2 = 0.0
    for fj, u in zip(fs, us):
        w = fj * fj
        u2 = u * u
        lf = math.log(fj)
        s0 += w
        s1 += w * u
        s2 += w * u2
        s3 += w * u2 * u
        s4 += w * u2 * u2
        t0 += w * lf
        t1 += w * u * lf
        t2 += w * u2 * lf
    th = _solve3([s0, s1, s2, s1, s2, s3, s2, s3, s4], [t0, t1, t2], pivot_tol)
    if th is None:
        return None
    eps = 0.0
    for fj, u in zip(fs, us):
        r = math.log(fj) - (th[0] + th[1] * u + th[2] * u * u)
        eps += fj * fj * r * r
    return jmax, s, th, eps


def fit_columns(f, tau, c_min, pivot_tol, sigma_default):
    n_rows, n_cols = f.shape
    gamma = np.empty(n_cols)
    sigma = np.empty(n_cols)
    fb = np.zeros(n_cols, dtype=np.uint8)
    res = np.zeros(n_cols)
    coef = np.full((n_cols, 3), np.nan)
    center = np.zeros(n_cols)
    scale = np.ones(n_cols)
    for col in range(n_cols):
        column = f[:, col]
        jmax = int(np.argmax(column))
        center[col] = gamma[col] = jmax
        sigma[col] = sigma_default
        fit = _fit_one(column, n_rows, tau, c_min, pivot_tol)
        if fit is None:
            fb[col] = 1
            continue
        _, s, th, eps = fit
        scale[col] = s
        res[col] = eps
        coef[col, 2] = th[2] / (s * s)
        coef[col, 1] = th[1] / s - 2.0 * th[2] * jmax / (s * s)
        coef[col, 0] = th[0] - th[1] * jmax / s + th[2] * jmax * jmax / (s * s)
        if not th[2] < -c_min * s * s:
            fb[col] = 1
            continue
        g = jmax - s * th[1] / (2.0 * th[2])
        if not -0.5 <= g <= n_rows - 0.5:
            fb[col] = 1
            continue
        gamma[col] = g
        sigma[col] = s * math.sqrt(-1.0 / (2.0 * th[2]))
    return gamma, sigma, fb, res, coef, center, scale


def patch_logits(padded, weights, bias):
    pr, pc = weights.shape
    h = padded.shape[0] - pr + 1
    w = padded.shape[1] - pc + 1
    out = np.full((h, w), float(bias))
    for a in range(pr):
        for b in range(pc):
            out += weights[a, b] * padded[a:a + h, b:b + w]
    return out


def patch_weight_grad(padded, g, pr, pc):
    h, w = g.shape
    out = np.empty((pr, pc))
    for a in range(pr):
        for b in range(pc):
            out[a, b] = np.sum(g * padded[a:a + h, b:b + w])
    return out
