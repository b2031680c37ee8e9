"""Build the optional compiled kernel; the package works without it."""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("REGENID_NO_EXT") != "1":
    try:
        import numpy as np
        import scipy.linalg.cython_blas  # noqa: F401  (BLAS declarations for the kernel)
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension(
                "regenid._scan_ext",
                ["src/regenid/_scan_ext.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
