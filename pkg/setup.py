import os

from setuptools import Extension, setup

# The compiled rank-index core is optional: the package falls back to the
# pure-Python implementation when the extension is absent (RPAF_NO_EXT=1
# skips the build entirely).
ext_modules = []
if os.environ.get("RPAF_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [Extension("rpaf._rankcore", ["src/rpaf/_rankcore.pyx"])],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
