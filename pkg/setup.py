"""Build script for the optional Cython graph kernels.

The extension accelerates the sparse aggregation loops used by the GNN
encoders.  If Cython or a C compiler is unavailable the package still
installs; graphlm.kernels falls back to the numpy implementations.
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "graphlm.kernels._graph_ops",
                ["src/graphlm/kernels/_graph_ops.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "initializedcheck": False,
            "cdivision": True,
        },
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
