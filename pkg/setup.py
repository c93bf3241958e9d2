"""Builds the optional Cython MaxSim kernel; the package falls back to the
numpy implementation when the extension cannot be compiled."""

from setuptools import setup

try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        Extension(
            "liforge.kernels._maxsim",
            ["src/liforge/kernels/_maxsim.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=["-O3", "-ffast-math", "-march=native"],
        )
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
