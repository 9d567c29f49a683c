import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("SHIFTADD_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "shiftadd._ckernels",
                    ["src/shiftadd/_ckernels.pyx"],
                    # no FMA contraction: results must match the numpy fallback bit-for-bit
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
