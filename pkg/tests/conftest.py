import sys

import numpy as np
import pytest

from surfseg import _fallback

try:
    from surfseg import _kernels
except ImportError:  # extension not built
    _kernels = None

BACKENDS = [_fallback] + ([_kernels] if _kernels is not None else [])


@pytest.fixture(params=BACKENDS, ids=lambda k: k.BACKEND)
def kern(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_instance(rng, n_max=64):
    n = int(rng.integers(1, n_max + 1))
    gamma = rng.uniform(0, 100, n)
    sigma = rng.uniform(0.5, 20, n)
    w = float(rng.uniform(0, 10))
    return gamma, sigma, w


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[num])
