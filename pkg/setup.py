import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# No -ffast-math / -march=native: the kernels rely on IEEE rounding of every
# product (no FMA contraction) for their bit-exact symmetry guarantees.
extensions = [
    Extension(
        "gricnn._ckernels",
        ["src/gricnn/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
)
