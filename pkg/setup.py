"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a pure numpy twin is selected at
import time), so any build failure here is non-fatal.  Set
DUALDOMAIN_NO_EXT=1 to skip the extension entirely.
"""

import os

from setuptools import Extension, setup


def _extensions():
    if os.environ.get("DUALDOMAIN_NO_EXT"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "dualdomain._kernels",
        ["src/dualdomain/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=_extensions())
