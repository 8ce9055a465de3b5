"""Backend selection for the hot numeric kernels.

``RELTUNE_BACKEND=numba`` (default) uses the JIT-compiled kernels,
``RELTUNE_BACKEND=numpy`` forces the pure-numpy fallback. The choice is
made once at import; ``BACKEND`` records which one is active.
``benchmarks/bench_kernels.py`` compares the two.
"""

import os

_requested = os.environ.get("RELTUNE_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(
        f"RELTUNE_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )

if _requested == "numpy":
    from .numpy_impl import gat_forward, gat_backward, pairwise_sq_dists, rbf_mean

    BACKEND = "numpy"
else:
    try:
        from .numba_impl import gat_forward, gat_backward, pairwise_sq_dists, rbf_mean

        BACKEND = "numba"
    except ImportError:
        from .numpy_impl import gat_forward, gat_backward, pairwise_sq_dists, rbf_mean

        BACKEND = "numpy"

from .numpy_impl import LEAKY_SLOPE

__all__ = [
    "BACKEND",
    "LEAKY_SLOPE",
    "gat_forward",
    "gat_backward",
    "pairwise_sq_dists",
    "rbf_mean",
]
