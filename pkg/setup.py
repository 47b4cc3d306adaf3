"""Build hook for the optional compiled encoder kernel.

The package is fully functional without the extension (a numpy
implementation is selected at import); failing to build it must never
fail the install, so cythonization is attempted best-effort.
"""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "pinyingender.neural._encoder_c",
                ["src/pinyingender/neural/_encoder_c.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
