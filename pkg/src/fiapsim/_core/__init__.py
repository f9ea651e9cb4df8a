"""Hot event loops: compiled core when built, pure-Python engine otherwise.

Set ``FIAPSIM_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import pyengine

ckernels = None
if os.environ.get("FIAPSIM_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as ckernels
    except ImportError:
        ckernels = None

HAVE_COMPILED = ckernels is not None
BACKEND = "cython" if HAVE_COMPILED else "python"
