import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# The compiled kernels are optional: without Cython (or a compiler) the
# package falls back to the numpy implementation at import time.
ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "fbnet.kernels._native",
                ["src/fbnet/kernels/_native.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
