import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    USE_CYTHON = True
except ImportError:
    USE_CYTHON = False

# Set SENSBENCH_NO_EXT=1 to install the pure-Python package only.
if os.environ.get("SENSBENCH_NO_EXT"):
    EXTENSIONS = []
elif USE_CYTHON:
    EXTENSIONS = cythonize(
        [
            Extension(
                "sensbench._kernels",
                ["src/sensbench/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
else:
    EXTENSIONS = []

setup(ext_modules=EXTENSIONS)
