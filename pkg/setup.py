"""Build the optional compiled SME kernel.

The package works without it: ``qctl._sme_py`` is used whenever the
extension cannot be imported.
"""
import os
import warnings

from setuptools import setup


def _extensions():
    if os.environ.get("QCTL_NO_EXT"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ModuleNotFoundError:
        warnings.warn("cython/numpy unavailable; building pure-Python qctl only")
        return []
    ext = Extension(
        "qctl._sme_kernel",
        ["src/qctl/_sme_kernel.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize(
        [ext],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )


setup(ext_modules=_extensions())
