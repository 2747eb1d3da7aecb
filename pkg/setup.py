from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "admri.nn._ckernels",
        ["src/admri/nn/_ckernels.pyx"],
        extra_compile_args=["-O3"],
    )
]

setup(ext_modules=cythonize(extensions, language_level="3"))
