"""Kernel backend selection.

The compiled Cython module is used when it imports cleanly; otherwise, or when
``TTSR_KERNELS=python`` is set, the numpy versions in ``_pykernels`` are used.
``use_backend`` switches at runtime (tests and the benchmark use it to compare
both paths).
"""
import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_NAMES = ("im2col", "col2im", "gather_columns", "scatter_add_columns", "row_max_argmax")
BACKEND = None


def available_backends():
    return ["python"] + (["cython"] if _ckernels is not None else [])


def use_backend(name):
    """Route every kernel through ``name`` ("cython" or "python")."""
    global BACKEND
    if name == "cython":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
        mod = _ckernels
    elif name == "python":
        mod = _pykernels
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    for fn in _NAMES:
        globals()[fn] = getattr(mod, fn)
    BACKEND = name
    log.debug("kernel backend: %s", name)


use_backend("python" if _ckernels is None or os.environ.get("TTSR_KERNELS") == "python" else "cython")
