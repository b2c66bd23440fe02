"""Backend selection for the hot loss kernels.

The compiled extension is preferred when it was built; the pure-numpy
fallback keeps the package fully functional without a compiler.  Set
``FEDPD_LAB_BACKEND=python`` (or ``compiled``) to force a choice, e.g. for
the backend benchmark.  Numerical results of the two backends agree to
floating-point reduction-order differences (~1e-14 relative); a single
backend is bit-reproducible run to run.
"""

import os

from . import py_kernels

_FORCED = os.environ.get("FEDPD_LAB_BACKEND", "").strip().lower()

if _FORCED == "python":
    _impl = py_kernels
elif _FORCED == "compiled":
    from . import _core as _impl
else:
    if _FORCED:
        raise ValueError(
            f"FEDPD_LAB_BACKEND={_FORCED!r}: expected 'python' or 'compiled'"
        )
    try:
        from . import _core as _impl
    except ImportError:
        _impl = py_kernels

BACKEND_NAME = _impl.BACKEND_NAME

penlog_value = _impl.penlog_value
penlog_grad = _impl.penlog_grad
penlog_batch_grad = _impl.penlog_batch_grad
siglog_value = _impl.siglog_value
siglog_grad = _impl.siglog_grad
siglog_batch_grad = _impl.siglog_batch_grad


def get_backend(name=None):
    """Return the kernel module for `name` ('python'/'compiled'), default active."""
    if name is None:
        return _impl
    if name == "python":
        return py_kernels
    if name == "compiled":
        from . import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")
