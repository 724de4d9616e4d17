"""Build script for the optional Cython alignment kernel.

The package works without the extension (a pure NumPy fallback is selected
at import time); building it just makes long-sequence alignment faster.
"""

import numpy as np
from Cython.Build import cythonize
from setuptools import setup

setup(
    ext_modules=cythonize(
        ["src/synthtalk/seq_align/_dtw_cy.pyx"],
        language_level="3",
    ),
    include_dirs=[np.get_include()],
)
