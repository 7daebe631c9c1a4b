"""Build hook for the optional Cython kernels.

If Cython or a C compiler is unavailable the package still installs and
``deepsense.kernels`` falls back to the numpy implementations.
"""
import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "deepsense._kernels",
                ["src/deepsense/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
