"""Kernel backend selection.

The Cython extension is used when it has been built; otherwise (or when the
environment variable ``ACCENTREC_PURE_PYTHON`` is set to a non-empty value other
than ``0``) the numpy fallback is used. ``BACKEND`` names the active one.
"""

import os

from . import _pykernels as python_backend

compiled_backend = None
if os.environ.get("ACCENTREC_PURE_PYTHON", "0") in ("", "0"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

_active = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "compiled" if compiled_backend is not None else "python"

ctc_forward_backward = _active.ctc_forward_backward
maxpool2x2_forward = _active.maxpool2x2_forward
maxpool2x2_backward = _active.maxpool2x2_backward

__all__ = [
    "BACKEND",
    "compiled_backend",
    "python_backend",
    "ctc_forward_backward",
    "maxpool2x2_forward",
    "maxpool2x2_backward",
]
