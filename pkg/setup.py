import os

from setuptools import setup

ext_modules = []
if os.environ.get("SRDETECT_PURE_PYTHON") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension(
                "srdetect._ckernels",
                ["src/srdetect/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # FMA contraction and sin/cos -> sincos fusion both change the last
                # bit of some results and would break parity with the Python kernels
                extra_compile_args=["-O3", "-ffp-contract=off", "-fno-math-errno",
                                    "-fno-builtin-sin", "-fno-builtin-cos"],
            )],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
