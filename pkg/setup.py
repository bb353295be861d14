"""Build configuration for the optional compiled kernel extension.

The package is pure Python plus one Cython extension for the hot
evaluation kernels.  The extension is best-effort: when Cython or a C
compiler is unavailable the build proceeds without it and the package
falls back to the pure-Python kernels at import time.
"""

from setuptools import setup

ext_modules = []
cmdclass = {}

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/gridbook/engine/kernels/_fast.pyx"],
        language_level=3,
    )
except ImportError:
    pass

if ext_modules:
    from setuptools.command.build_ext import build_ext

    class OptionalBuildExt(build_ext):
        """Swallow compiler failures; the pure kernels take over."""

        def run(self):
            try:
                super().run()
            except Exception as exc:  # noqa: BLE001
                print(f"warning: compiled kernels skipped: {exc}")

        def build_extension(self, ext):
            try:
                super().build_extension(ext)
            except Exception as exc:  # noqa: BLE001
                print(f"warning: compiled kernels skipped: {exc}")

    cmdclass["build_ext"] = OptionalBuildExt

setup(ext_modules=ext_modules, cmdclass=cmdclass)
