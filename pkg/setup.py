"""Build script: compiles the optional Cython kernel extension.

The package is fully functional without the extension (a numpy fallback is
selected at import time), so any compile failure degrades to a warning
instead of aborting the install.
"""

import warnings

from setuptools import setup

ext_modules = []
cmdclass = {}

try:
    from Cython.Build import cythonize
    from setuptools import Extension
    from setuptools.command.build_ext import build_ext as _build_ext

    class OptionalBuildExt(_build_ext):
        def run(self):
            try:
                super().run()
            except Exception as exc:  # missing compiler, etc.
                warnings.warn(f"compiled kernels skipped ({exc}); using numpy fallback")

        def build_extension(self, ext):
            try:
                super().build_extension(ext)
            except Exception as exc:
                warnings.warn(f"compiled kernels skipped ({exc}); using numpy fallback")

    ext_modules = cythonize(
        [
            Extension(
                "atnet.backend._ckernels",
                ["src/atnet/backend/_ckernels.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
    cmdclass = {"build_ext": OptionalBuildExt}
except ImportError:
    warnings.warn("Cython not available; building without compiled kernels")

setup(ext_modules=ext_modules, cmdclass=cmdclass)
