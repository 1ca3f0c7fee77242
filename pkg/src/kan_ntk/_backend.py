"""Selects the kernel implementation at import time.

The compiled extension is preferred. Set ``KAN_NTK_BACKEND=python`` to force
the numpy fallback, or ``KAN_NTK_BACKEND=cython`` to fail loudly when the
extension is missing.
"""

import os

from . import _pykernels

_requested = os.environ.get("KAN_NTK_BACKEND", "auto").lower()

kernels = _pykernels
BACKEND = "python"

if _requested != "python":
    try:
        from . import _ckernels

        kernels = _ckernels
        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise


def available():
    """Names of the backends that can be selected in this process."""
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401

        names.append("cython")
    except ImportError:
        pass
    return names


def use(name):
    """Switch backend at runtime; returns the previous name."""
    global kernels, BACKEND
    previous = BACKEND
    if name == "python":
        kernels, BACKEND = _pykernels, "python"
    elif name == "cython":
        from . import _ckernels

        kernels, BACKEND = _ckernels, "cython"
    else:
        raise ValueError(f"unknown backend {name!r}")
    return previous


def family_code(spec):
    return {"chebyshev": 0, "monomial": 1}[spec.family]


def transform_code(spec):
    return {"tanh": 0, "sigmoid": 1, "identity": 2}[spec.kind]
