"""Select the compiled kernels when available, else the pure-Python fallback.

Set ``SURFSEG_PURE_PYTHON=1`` to force the fallback.
"""

import os

from surfseg import _fallback

if os.environ.get("SURFSEG_PURE_PYTHON", "") not in ("", "0"):
    kernels = _fallback
else:
    try:
        from surfseg import _kernels as kernels
    except ImportError:
        kernels = _fallback

BACKEND = kernels.BACKEND
