"""Build the optional compiled kernels.

If Cython or a C compiler is unavailable the package still installs and
``drlcontrol.kernels`` falls back to the numpy implementations.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("DRLCONTROL_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "drlcontrol._ckernels",
                    ["src/drlcontrol/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
