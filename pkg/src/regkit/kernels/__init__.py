"""Hot-loop kernels with a compiled fast path.

The Cython extension is preferred when it built successfully; otherwise
the vectorized numpy implementation is used. Set REGKIT_PURE_PYTHON=1 to
force the fallback (useful for benchmarking the two side by side).
"""

import os

from .fpfh_numpy import pair_feature_histograms as _numpy_pair_feature_histograms

if os.environ.get("REGKIT_PURE_PYTHON"):
    pair_feature_histograms = _numpy_pair_feature_histograms
    KERNEL_BACKEND = "numpy"
else:
    try:
        from ._fpfh import pair_feature_histograms

        KERNEL_BACKEND = "cython"
    except ImportError:
        pair_feature_histograms = _numpy_pair_feature_histograms
        KERNEL_BACKEND = "numpy"

__all__ = ["pair_feature_histograms", "KERNEL_BACKEND"]
