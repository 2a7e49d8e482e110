"""Build script for the optional compiled kernel extension.

The package works without the extension (a NumPy fallback is selected at
import time); the extension only speeds up the reduction-heavy inner loops.
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "tabphrase.numcore.kernels._speedups",
                ["src/tabphrase/numcore/kernels/_speedups.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        language_level=3,
    )

setup(ext_modules=extensions)
