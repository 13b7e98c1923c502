"""Build script for the optional compiled FPFH kernel.

The package works without the extension (a vectorized numpy fallback is
selected at import time), so the extension is marked optional: a failed
compile degrades to the fallback instead of breaking the install.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext = Extension(
        "regkit.kernels._fpfh",
        ["src/regkit/kernels/_fpfh.pyx"],
        include_dirs=[np.get_include()],
        # -ffp-contract=off keeps per-pair arithmetic bit-compatible with
        # the numpy fallback (no FMA contraction surprises).
        extra_compile_args=["-O3", "-ffp-contract=off"],
        optional=True,
    )
    ext_modules = cythonize([ext], language_level=3)

setup(ext_modules=ext_modules)
