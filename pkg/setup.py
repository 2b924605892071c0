import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "hybenc._scan_cy",
                ["src/hybenc/_scan_cy.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
    )
except ImportError:
    # Pure-python fallback kernel is selected at import time when the
    # compiled extension is unavailable.
    extensions = []

setup(ext_modules=extensions)
