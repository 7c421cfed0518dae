import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("HANET_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:  # numpy fallback is used at runtime
        pass
    else:
        ext_modules = cythonize(
            [Extension("hanet._ckernels", ["src/hanet/_ckernels.pyx"],
                       include_dirs=[np.get_include()],
                       extra_compile_args=["-O3"])],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
