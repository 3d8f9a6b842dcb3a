import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("GAP_FORGE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "gap_forge._kernels._core",
                ["src/gap_forge/_kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": 3, "embedsignature": True},
    )

setup(ext_modules=ext_modules)
