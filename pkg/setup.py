"""Build script: compiles the optional C kernel extension.

The extension is best-effort: if Cython or a C compiler is missing the
install still succeeds and the package falls back to the pure-Python
kernels at import time.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "timecrisis._backend._core",
                ["src/timecrisis/_backend/_core.pyx"],
                include_dirs=[numpy.get_include()],
                # -ffp-contract=off keeps the C arithmetic bit-identical to
                # the pure-Python kernels (no FMA contraction).
                extra_compile_args=["-O2", "-ffp-contract=off"],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover
    print(f"timecrisis: skipping C kernel build ({exc!r})", file=sys.stderr)

setup(ext_modules=ext_modules)
