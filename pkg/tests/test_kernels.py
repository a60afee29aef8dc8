import numpy as np
import pytest

from surfseg import _fallback
from tests.conftest import BACKENDS


def test_tridiag_matches_dense(kern, rng):
    for n in (1, 2, 3, 17, 128):
        off = -rng.uniform(0, 3, n - 1)
        diag = rng.uniform(0.1, 1, n) + 2 * 3
        rhs = rng.normal(size=n)
        h = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
        np.testing.assert_allclose(kern.tridiag_solve(diag, off, rhs), np.linalg.solve(h, rhs),
                                   rtol=1e-12, atol=1e-12)


def test_tridiag_rejects_bad_pivot(kern):
    with pytest.raises(FloatingPointError):
        kern.tridiag_solve(np.array([1.0, 1.0]), np.array([2.0]), np.ones(2))


def test_ldl_pivots_reconstruct(kern, rng):
    diag = rng.uniform(3, 5, 10)
    off = rng.uniform(-1, 1, 9)
    d = kern.ldl_pivots(diag, off)
    l = np.eye(10) + np.diag(off / d[:-1], -1)
    h = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
    np.testing.assert_allclose(l @ np.diag(d) @ l.T, h, atol=1e-12)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled kernels not built")
def test_backends_agree(rng):
    fallback, compiled = BACKENDS
    f = rng.uniform(0, 1, (80, 12)) ** 4
    f[:, 3] = 0.0
    a = fallback.fit_columns(f, 1e-3, 1e-12, 1e-12, 8.0)
    b = compiled.fit_columns(f, 1e-3, 1e-12, 1e-12, 8.0)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12)
    img = rng.normal(size=(30, 20))
    padded = np.pad(img, 2, mode="edge")
    k = rng.normal(size=(5, 5))
    np.testing.assert_allclose(fallback.patch_logits(padded, k, 0.3),
                               compiled.patch_logits(padded, k, 0.3), rtol=1e-12)
    g = rng.normal(size=(30, 20))
    np.testing.assert_allclose(fallback.patch_weight_grad(padded, g, 5, 5),
                               compiled.patch_weight_grad(padded, g, 5, 5), rtol=1e-10)


def test_patch_logits_is_correlation(kern, rng):
    img = rng.normal(size=(7, 6))
    k = rng.normal(size=(3, 3))
    padded = np.ascontiguousarray(np.pad(img, 1, mode="edge"))
    out = kern.patch_logits(padded, k, 1.5)
    i, j = 4, 2
    assert out[i, j] == pytest.approx(np.sum(k * padded[i:i + 3, j:j + 3]) + 1.5)


def test_fallback_reports_backend_name():
    assert _fallback.BACKEND == "python"


def test_env_switch_selects_fallback():
    import os
    import subprocess
    import sys

    code = ("import numpy as np, surfseg; from surfseg.core import GaussianField; "
            "x = surfseg.solve(surfseg.assemble(GaussianField(np.array([0., 3., 0.]), np.ones(3)), 0.5)).x; "
            "print(surfseg.BACKEND, *x)")
    env = dict(os.environ, SURFSEG_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    name, *vals = out.stdout.split()
    assert name == "python"
    np.testing.assert_allclose([float(v) for v in vals], [0.75, 1.5, 0.75], rtol=1e-14)
