"""Pick the compiled kernels when available, else the pure-Python ones.

Set ``ZSLRAC_BACKEND=python`` to force the fallback.
"""

import os

from . import _pyfallback

BACKEND = "python"
network_simplex = _pyfallback.network_simplex
nearest_scaled = _pyfallback.nearest_scaled

if os.environ.get("ZSLRAC_BACKEND", "").lower() != "python":
    try:
        from . import _core
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        network_simplex = _core.network_simplex
        nearest_scaled = _core.nearest_scaled
