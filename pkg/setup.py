from setuptools import Extension, setup

import numpy as np
from Cython.Build import cythonize

# -ffp-contract=off: the compiled kernels must produce bit-identical float64
# results to the numpy fallback and the patch-by-patch reference; FMA
# contraction would change rounding. Never add -ffast-math here.
extensions = [
    Extension(
        "denseprop._kernels",
        ["src/denseprop/_kernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3", "-ffp-contract=off", "-fopenmp"],
        extra_link_args=["-fopenmp"],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )
)
