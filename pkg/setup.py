"""Builds the optional compiled kernels; the package still works without them."""

import os

from setuptools import setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler or Cython missing
            self.warn(f"compiled kernels not built ({exc}); numpy fallback will be used")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self.warn(f"failed to build {ext.name} ({exc}); numpy fallback will be used")


def extensions():
    if os.environ.get("MERGE_MADDPG_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    from setuptools import Extension

    ext = Extension(
        "merge_maddpg._kernels",
        ["src/merge_maddpg/_kernels.pyx"],
        # no errno from sqrt lets the Adam loop vectorize
        extra_compile_args=["-O3", "-fno-math-errno"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
