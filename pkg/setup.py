from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    # optional=True: a failed compile degrades to the pure-Python kernels
    # instead of failing the install.
    ext_modules = cythonize(
        [
            Extension(
                "hilscan._ckernels",
                ["src/hilscan/_ckernels.pyx"],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
