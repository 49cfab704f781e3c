"""Build script: compiles the optional consensus/density kernels.

The compiled extension is a performance layer only; if it cannot be built
the package falls back to the pure-numpy kernels at import time.
Set WINDGMM_SKIP_EXT=1 to skip the extension build entirely.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Degrade to the pure-python backend instead of failing the install."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, broken toolchain, ...
            print(f"warning: skipping compiled kernels ({exc}); "
                  "pure-python backend will be used")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: could not build {ext.name} ({exc}); "
                  "pure-python backend will be used")


ext_modules = []
cmdclass = {}
if not os.environ.get("WINDGMM_SKIP_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "windgmm._ckernels",
                    sources=["src/windgmm/_ckernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
            compiler_directives={
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
        cmdclass = {"build_ext": optional_build_ext}
    except ImportError as exc:
        print(f"warning: {exc}; building without compiled kernels")

setup(ext_modules=ext_modules, cmdclass=cmdclass)
