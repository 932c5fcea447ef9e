"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy versions
are used. Setting ``BANACH_PD_PURE=1`` forces the numpy versions.
"""
import os

if os.environ.get("BANACH_PD_PURE", "") not in ("", "0"):
    from ._pykernels import BACKEND, cpbs_dense_run, lr_duality_map, lr_norm  # noqa: F401
else:
    try:
        from ._ckernels import BACKEND, cpbs_dense_run, lr_duality_map, lr_norm  # noqa: F401
    except ImportError:  # extension not built
        from ._pykernels import BACKEND, cpbs_dense_run, lr_duality_map, lr_norm  # noqa: F401

from ._pykernels import (  # noqa: E402,F401
    F_L1,
    F_POWER2,
    F_ZERO,
    STATUS_DIVERGED,
    STATUS_MAXITER,
    STATUS_STAGNATION,
    STATUS_TOL,
)
