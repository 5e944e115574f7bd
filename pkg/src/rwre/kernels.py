"""Stepping-kernel backend selection.

Prefers the compiled extension; falls back to the pure-Python twin when
the extension is missing or when RWRE_FORCE_PYTHON_KERNEL is set. Both
backends produce bit-identical trajectories, so the choice only affects
speed; ``benchmarks/bench_walk.py`` quantifies the gap.
"""

from __future__ import annotations

import os

from . import _kernels_py

ST_HORIZON = _kernels_py.ST_HORIZON
ST_WINDOW = _kernels_py.ST_WINDOW
ST_REGION = _kernels_py.ST_REGION
K_LEVEL = _kernels_py.K_LEVEL
K_BOX = _kernels_py.K_BOX
K_CONE = _kernels_py.K_CONE
K_TRANSVERSE = _kernels_py.K_TRANSVERSE
EPS_NONE = _kernels_py.EPS_NONE

if os.environ.get("RWRE_FORCE_PYTHON_KERNEL"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py

BACKEND = _impl.BACKEND
run_batch = _impl.run_batch
resume_one = _impl.resume_one


def backends():
    """All importable backends, for equivalence tests and benchmarks."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels
        out["cython"] = _kernels
    except ImportError:
        pass
    return out
