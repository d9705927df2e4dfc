"""Build script for the optional compiled DTW/autocorrelation kernels.

The package works without the extension (pure-Python fallbacks are selected
at import time); the extension only accelerates the inner loops.
"""

import numpy
from setuptools import setup
from setuptools.extension import Extension

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "artimit._kernels",
                ["src/artimit/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
