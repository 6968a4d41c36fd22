import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python fallback only
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("LTE_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "lte.kernels._ext",
                ["src/lte/kernels/_ext.pyx"],
                include_dirs=[np.get_include()],
                # no fast-math: results must match the numpy fallback bit for bit
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
