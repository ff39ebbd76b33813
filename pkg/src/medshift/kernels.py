"""Kernel dispatch: the compiled extension when built, numpy otherwise.

Set ``MEDSHIFT_PURE_PYTHON=1`` to force the numpy versions.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("MEDSHIFT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def irls_pass(X, y, w, offset, beta):
    if _impl is _kernels_py:
        return _impl.irls_pass(X, y, w, offset, beta)
    c = np.ascontiguousarray
    return _impl.irls_pass(c(X, dtype=float), c(y, dtype=float), c(w, dtype=float),
                           c(offset, dtype=float), c(beta, dtype=float))


def stratum_sums(key, y, w, n_keys):
    if _impl is _kernels_py:
        return _impl.stratum_sums(key, y, w, n_keys)
    c = np.ascontiguousarray
    return _impl.stratum_sums(c(key, dtype=np.intp), c(y, dtype=float), c(w, dtype=float), int(n_keys))


__all__ = ["BACKEND", "irls_pass", "stratum_sums"]
