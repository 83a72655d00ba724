"""Kernel backend selection.

The compiled extension is preferred when it imports; otherwise the pure
numpy fallback is used. Set RINGMPC_BACKEND=python or =native to force a
choice (forcing native raises if the extension is missing, so a broken
build fails loudly instead of silently running slow).
"""

from __future__ import annotations

import os

from . import _pykernels

_choice = os.environ.get("RINGMPC_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "native", "python"):
    raise RuntimeError(
        f"RINGMPC_BACKEND must be auto, native or python, got {_choice!r}")

if _choice == "python":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]
        BACKEND = "native"
    except ImportError:
        if _choice == "native":
            raise
        _impl = _pykernels
        BACKEND = "python"

apgd_box_dense = _impl.apgd_box_dense
rk45_two_body = _impl.rk45_two_body

QP_CONVERGED = _pykernels.QP_CONVERGED
QP_MAX_ITER = _pykernels.QP_MAX_ITER
RK_OK = _pykernels.RK_OK
RK_STEP_UNDERFLOW = _pykernels.RK_STEP_UNDERFLOW
RK_SINGULAR_RADIUS = _pykernels.RK_SINGULAR_RADIUS
