import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "bibranch._slotops_cy",
                ["src/bibranch/_slotops_cy.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # Pure-Python install; bibranch.backend falls back to the numpy kernels.
    ext_modules = []

setup(ext_modules=ext_modules)
