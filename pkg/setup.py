"""Build script for the optional compiled kernels.

    pip install -e . --no-build-isolation
    python setup.py build_ext --inplace

If Cython is missing the package still installs and runs on the numpy fallback.
"""
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "vigil._ckernels",
                ["src/vigil/_ckernels.pyx"],
                # no FMA contraction: keeps accumulation bitwise-comparable with numpy
                extra_compile_args=["-O3", "-ffp-contract=off"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
