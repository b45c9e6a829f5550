import os

import numpy as np
from setuptools import Extension, setup

# SKDV_NO_EXT=1 skips the compiled kernel; the package then runs on the numpy fallback.
if os.environ.get("SKDV_NO_EXT"):
    ext_modules = []
else:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "skdv._kernels",
                ["src/skdv/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
