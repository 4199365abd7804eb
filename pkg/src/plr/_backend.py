"""Pick the training kernels: compiled extension when importable, numpy otherwise.

Set ``PLR_BACKEND=python`` to force the numpy implementation.
"""

import os

from . import _fallback

kernels = _fallback
if os.environ.get("PLR_BACKEND", "").lower() not in ("python", "numpy", "fallback"):
    try:
        from . import _kernels as kernels
    except ImportError:
        kernels = _fallback

NAME = kernels.NAME
