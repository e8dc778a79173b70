"""Kernel backend selection.

The compiled extension is preferred when it imports cleanly; setting the
environment variable ``SPECMIX_PURE_PYTHON=1`` forces the numpy fallback.
Both backends expose the same functions (see ``_kernels_py`` for the
reference semantics), so the choice only affects speed.
"""

import os

from . import _kernels_py

_FORCE_PURE = os.environ.get("SPECMIX_PURE_PYTHON", "") not in ("", "0")

if not _FORCE_PURE:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py
else:
    _impl = _kernels_py

COMPILED = bool(getattr(_impl, "COMPILED", False))
BACKEND_NAME = "compiled" if COMPILED else "numpy"

power_iteration_scan = _impl.power_iteration_scan
power_iteration_tape = _impl.power_iteration_tape
power_iteration_backward = _impl.power_iteration_backward
triple_mean = _impl.triple_mean
cross_pair_vec = _impl.cross_pair_vec


def get_backends():
    """Return {name: module} for every importable backend (benchmark use)."""
    out = {"numpy": _kernels_py}
    try:
        from . import _kernels
        out["compiled"] = _kernels
    except ImportError:
        pass
    return out
