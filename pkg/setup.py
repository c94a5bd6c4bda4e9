"""Build script: compiles the optional Cython sampling kernels.

The package works without the extension (a pure-numpy fallback is selected
at import time), so any failure here degrades to a source-only install.
Set TAPGEN_NO_EXT=1 to skip the extension build entirely.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("TAPGEN_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools.extension import Extension

        # -ffp-contract=off keeps per-operation IEEE rounding so the compiled
        # kernels are bit-identical to the numpy fallback.
        ext_modules = cythonize(
            [
                Extension(
                    "tapgen._kernels._sampling_cy",
                    ["src/tapgen/_kernels/_sampling_cy.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3", "-ffp-contract=off"],
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
