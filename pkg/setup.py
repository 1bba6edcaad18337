"""Build script for the optional compiled kernels.

The Cython core is optional: when Cython or a C compiler is unavailable the
package installs without it and ``dlmorder._kernels`` falls back to the
pure-Python implementation.
"""
import os
import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing or broken
            print(f"warning: compiled kernels not built ({exc}); using Python fallback", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: failed to build {ext.name} ({exc}); using Python fallback", file=sys.stderr)


ext_modules = []
if not os.environ.get("DLMORDER_NO_EXT"):
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "dlmorder._kernels._core",
                    ["src/dlmorder/_kernels/_core.pyx"],
                    # no FMA contraction: results must match the Python fallback bit for bit
                    extra_compile_args=["-O2", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
