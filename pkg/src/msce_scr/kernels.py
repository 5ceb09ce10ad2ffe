"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise, or
when ``MSCE_SCR_PURE=1`` is set, the pure-Python ``_pykernels`` are used.
"""

import os

from . import _pykernels

BACKENDS = {"python": _pykernels}

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None
else:
    BACKENDS["cython"] = _ckernels

if os.environ.get("MSCE_SCR_PURE") == "1" or _ckernels is None:
    BACKEND = "python"
else:
    BACKEND = "cython"

_impl = BACKENDS[BACKEND]
ctc_forward_backward = _impl.ctc_forward_backward
decode_step = _impl.decode_step


def get_backend(name=None):
    """Module implementing the kernels for ``name`` (default: active backend)."""
    key = name or BACKEND
    if key not in BACKENDS:
        raise ValueError(f"unknown kernel backend {key!r}; available: {sorted(BACKENDS)}")
    return BACKENDS[key]
