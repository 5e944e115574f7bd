"""Random walks in random environments: simulation, exact solvers, statistics.

The stepping kernel is compiled when the extension built, with a
bit-identical pure-Python fallback selected at import time; see
``rwre.kernels.BACKEND``.
"""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
__all__ = ["KERNEL_BACKEND", "__version__"]
