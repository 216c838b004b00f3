"""Build script: compiles the Cython kernel extension when possible.

The package works without the extension (a numpy fallback is selected
at import), so any build failure here downgrades to a pure-Python
install rather than aborting.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension(
            "langvec.kernels._lstm_cy",
            ["src/langvec/kernels/_lstm_cy.pyx"],
            extra_compile_args=["-O3"],
        )],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
