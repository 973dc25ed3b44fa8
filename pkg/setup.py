import os

from setuptools import setup

ext_modules = []
if os.environ.get("RACKSIM_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "racksim.kernels._ftl_ext",
                    ["src/racksim/kernels/_ftl_ext.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
