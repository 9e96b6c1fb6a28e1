"""Kernel dispatch: compiled extension when available, numpy otherwise.

Set ``MULTILOOK_FORCE_NUMPY=1`` in the environment to skip the extension
(used by tests and the kernel benchmark to compare both paths).
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("MULTILOOK_FORCE_NUMPY", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py

COMPILED: bool = _impl.COMPILED
S_FLOOR: float = _impl.S_FLOOR

covariance_diag = _impl.covariance_diag
prox_quadratic = _impl.prox_quadratic
prox_cubic = _impl.prox_cubic
