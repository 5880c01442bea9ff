"""Backend selection for the hot kernels.

The compiled ``_kernels`` extension is used when it imports; otherwise the
numpy fallback.  ``SENSBENCH_BACKEND=python`` forces the fallback and
``SENSBENCH_BACKEND=compiled`` makes a missing extension an import error.
"""

import os

from . import _fallback

_requested = os.environ.get("SENSBENCH_BACKEND", "").strip().lower()

if _requested == "python":
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise
        _impl = _fallback
        BACKEND = "python"

moving_average = _impl.moving_average
linear_epoch = _impl.linear_epoch
mlp_epoch = _impl.mlp_epoch


def get_backend(name=None):
    """Return the kernel module for ``name`` ("compiled" or "python"), default the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "compiled":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")


def compiled_available() -> bool:
    try:
        from . import _kernels  # noqa: F401
    except ImportError:
        return False
    return True
