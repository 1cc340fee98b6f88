"""Build script for the optional compiled kernel.

The package is fully functional without the extension; robust_gum._kernels
falls back to the numpy implementation when robust_gum._speedups is absent.
"""

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the speedup extension if possible, otherwise skip it."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # missing compiler / Cython
            print(f"warning: skipping compiled kernels ({exc!r}); "
                  "pure-python fallback will be used")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: failed to build {ext.name} ({exc!r}); "
                  "pure-python fallback will be used")


def make_extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "robust_gum._speedups",
        ["src/robust_gum/_speedups.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], language_level="3")


setup(
    ext_modules=make_extensions(),
    cmdclass={"build_ext": OptionalBuildExt},
)
