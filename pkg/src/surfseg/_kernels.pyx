# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Signatures mirror :mod:`surfseg._fallback` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, sqrt, fabs, isfinite

cnp.import_array()

BACKEND = "cython"


def tridiag_solve(double[::1] diag, double[::1] off, double[::1] rhs):
    """Solve a symmetric tridiagonal system by the Thomas recurrence."""
    cdef Py_ssize_t n = diag.shape[0]
    cdef Py_ssize_t i
    cdef double denom
    x_arr = np.empty(n, dtype=np.float64)
    cp_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] x = x_arr
    cdef double[::1] cp = cp_arr
    if n == 0:
        return x_arr
    denom = diag[0]
    if not (denom > 0.0) or not isfinite(denom):
        raise FloatingPointError("non-positive pivot at 0")
    if n > 1:
        cp[0] = off[0] / denom
    x[0] = rhs[0] / denom
    for i in range(1, n):
        denom = diag[i] - off[i - 1] * cp[i - 1]
        if not (denom > 0.0) or not isfinite(denom):
            raise FloatingPointError(f"non-positive pivot at {i}")
        if i < n - 1:
            cp[i] = off[i] / denom
        x[i] = (rhs[i] - off[i - 1] * x[i - 1]) / denom
    for i in range(n - 2, -1, -1):
        x[i] -= cp[i] * x[i + 1]
    return x_arr


def ldl_pivots(double[::1] diag, double[::1] off):
    cdef Py_ssize_t n = diag.shape[0]
    cdef Py_ssize_t i
    d_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] d = d_arr
    if n == 0:
        return d_arr
    d[0] = diag[0]
    for i in range(1, n):
        d[i] = diag[i] - off[i - 1] * off[i - 1] / d[i - 1]
    return d_arr


cdef int _solve3(double* m, double* v, double* out, double pivot_tol) noexcept nogil:
    # Gaussian elimination with partial pivoting on a 3x3 row-major system.
    cdef double a[3][4]
    cdef double big = 0.0, t, f
    cdef int i, j, k, p
    for i in range(3):
        for j in range(3):
            a[i][j] = m[3 * i + j]
            if fabs(a[i][j]) > big:
                big = fabs(a[i][j])
        a[i][3] = v[i]
    if big == 0.0:
        return 1
    for k in range(3):
        p = k
        for i in range(k + 1, 3):
            if fabs(a[i][k]) > fabs(a[p][k]):
                p = i
        if fabs(a[p][k]) <= pivot_tol * big:
            return 1
        if p != k:
            for j in range(4):
                t = a[k][j]
                a[k][j] = a[p][j]
                a[p][j] = t
        for i in range(k + 1, 3):
            f = a[i][k] / a[k][k]
            for j in range(k, 4):
                a[i][j] -= f * a[k][j]
    for i in range(2, -1, -1):
        t = a[i][3]
        for j in range(i + 1, 3):
            t -= a[i][j] * out[j]
        out[i] = t / a[i][i]
    return 0


def fit_columns(double[:, ::1] f, double tau, double c_min, double pivot_tol,
                double sigma_default):
    """Weighted log-quadratic Gaussian fit of every column of ``f``.

    Returns ``(gamma, sigma, fallback, residual, coef, center, scale)`` where
    ``coef`` holds ``(a, b, c)`` in row-index coordinates and ``center``/``scale``
    are the affine change of variable used for conditioning.
    """
    cdef Py_ssize_t n_rows = f.shape[0]
    cdef Py_ssize_t n_cols = f.shape[1]
    gamma_a = np.empty(n_cols)
    sigma_a = np.empty(n_cols)
    fb_a = np.zeros(n_cols, dtype=np.uint8)
    res_a = np.zeros(n_cols)
    coef_a = np.full((n_cols, 3), np.nan)
    center_a = np.zeros(n_cols)
    scale_a = np.ones(n_cols)
    cdef double[::1] gamma = gamma_a
    cdef double[::1] sigma = sigma_a
    cdef unsigned char[::1] fb = fb_a
    cdef double[::1] res = res_a
    cdef double[:, ::1] coef = coef_a
    cdef double[::1] center = center_a
    cdef double[::1] scale = scale_a
    cdef Py_ssize_t col, j, jmax, jlo, jhi, count
    cdef double fmax, cut, fj, w, u, u2, lf, s, r, eps
    cdef double m[9]
    cdef double v[3]
    cdef double th[3]
    cdef double s0, s1, s2, s3, s4, t0, t1, t2
    for col in range(n_cols):
        fmax = f[0, col]
        jmax = 0
        for j in range(1, n_rows):
            if f[j, col] > fmax:
                fmax = f[j, col]
                jmax = j
        center[col] = <double>jmax
        gamma[col] = <double>jmax
        sigma[col] = sigma_default
        if not (fmax > 0.0):
            fb[col] = 1
            continue
        cut = tau * fmax
        count = 0
        jlo = jmax
        jhi = jmax
        for j in range(n_rows):
            if f[j, col] >= cut and f[j, col] > 0.0:
                count += 1
                if j < jlo:
                    jlo = j
                if j > jhi:
                    jhi = j
        if count < 3:
            fb[col] = 1
            continue
        s = <double>(jhi - jmax if jhi - jmax > jmax - jlo else jmax - jlo)
        if s < 1.0:
            s = 1.0
        scale[col] = s
        s0 = s1 = s2 = s3 = s4 = t0 = t1 = t2 = 0.0
        for j in range(n_rows):
            fj = f[j, col]
            if fj >= cut and fj > 0.0:
                w = fj * fj
                u = (<double>(j - jmax)) / s
                u2 = u * u
                lf = log(fj)
                s0 += w
                s1 += w * u
                s2 += w * u2
                s3 += w * u2 * u
                s4 += w * u2 * u2
                t0 += w * lf
                t1 += w * u * lf
                t2 += w * u2 * lf
        m[0] = s0; m[1] = s1; m[2] = s2
        m[3] = s1; m[4] = s2; m[5] = s3
        m[6] = s2; m[7] = s3; m[8] = s4
        v[0] = t0; v[1] = t1; v[2] = t2
        if _solve3(m, v, th, pivot_tol) != 0:
            fb[col] = 1
            continue
        eps = 0.0
        for j in range(n_rows):
            fj = f[j, col]
            if fj >= cut and fj > 0.0:
                u = (<double>(j - jmax)) / s
                r = log(fj) - (th[0] + th[1] * u + th[2] * u * u)
                eps += fj * fj * r * r
        res[col] = eps
        # back to row-index coordinates: u = (j - jmax) / s
        coef[col, 2] = th[2] / (s * s)
        coef[col, 1] = th[1] / s - 2.0 * th[2] * jmax / (s * s)
        coef[col, 0] = th[0] - th[1] * jmax / s + th[2] * jmax * jmax / (s * s)
        if not (th[2] < -c_min * s * s):
            fb[col] = 1
            continue
        r = jmax - s * th[1] / (2.0 * th[2])
        if not (r >= -0.5 and r <= n_rows - 0.5):
            fb[col] = 1
            continue
        gamma[col] = r
        sigma[col] = s * sqrt(-1.0 / (2.0 * th[2]))
    return gamma_a, sigma_a, fb_a, res_a, coef_a, center_a, scale_a


def patch_logits(double[:, ::1] padded, double[:, ::1] weights, double bias):
    """Correlate an edge-padded image with a patch kernel."""
    cdef Py_ssize_t pr = weights.shape[0]
    cdef Py_ssize_t pc = weights.shape[1]
    cdef Py_ssize_t h = padded.shape[0] - pr + 1
    cdef Py_ssize_t w = padded.shape[1] - pc + 1
    cdef Py_ssize_t i, j, a, b
    cdef double acc
    out_a = np.empty((h, w))
    cdef double[:, ::1] out = out_a
    for i in range(h):
        for j in range(w):
            acc = bias
            for a in range(pr):
                for b in range(pc):
                    acc += weights[a, b] * padded[i + a, j + b]
            out[i, j] = acc
    return out_a


def patch_weight_grad(double[:, ::1] padded, double[:, ::1] g, Py_ssize_t pr, Py_ssize_t pc):
    cdef Py_ssize_t h = g.shape[0]
    cdef Py_ssize_t w = g.shape[1]
    cdef Py_ssize_t i, j, a, b
    cdef double acc
    out_a = np.empty((pr, pc))
    cdef double[:, ::1] out = out_a
    for a in range(pr):
        for b in range(pc):
            acc = 0.0
            for i in range(h):
                for j in range(w):
                    acc += g[i, j] * padded[i + a, j + b]
            out[a, b] = acc
    return out_a
