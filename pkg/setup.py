"""Build script: compiles the optional kernel extension when Cython is present."""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:  # pure-Python install still works, backend falls back
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "ldag.backend._ckernels",
                ["src/ldag/backend/_ckernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
