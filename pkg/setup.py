import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "pistonshock.kernels._fvcore",
                ["src/pistonshock/kernels/_fvcore.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    # no Cython: install pure-Python only, the numpy kernel backend takes over
    ext_modules = []

setup(ext_modules=ext_modules)
