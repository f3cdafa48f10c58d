"""Kernel backend selection.

The compiled extension is used when it imports cleanly; otherwise the numpy
twin takes over. Set SEPSIS_E2E_BACKEND=python or =cython before import to
force a choice (cython raises if the extension is missing).
"""

import os

from . import dense_py

_choice = os.environ.get("SEPSIS_E2E_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "python", "cython"):
    raise ImportError(
        "SEPSIS_E2E_BACKEND must be 'auto', 'python' or 'cython', "
        "got %r" % _choice
    )

if _choice == "python":
    _impl = dense_py
    BACKEND_NAME = "python"
else:
    try:
        from . import _dense_cy as _impl

        BACKEND_NAME = "cython"
    except ImportError:
        if _choice == "cython":
            raise
        _impl = dense_py
        BACKEND_NAME = "python"

affine = _impl.affine
affine_backward = _impl.affine_backward
relu = _impl.relu
relu_backward = _impl.relu_backward
elementwise_mul = _impl.elementwise_mul
softmax_ce = _impl.softmax_ce
sgd_update_flat = _impl.sgd_update_flat

__all__ = [
    "BACKEND_NAME",
    "affine",
    "affine_backward",
    "relu",
    "relu_backward",
    "elementwise_mul",
    "softmax_ce",
    "sgd_update_flat",
]
