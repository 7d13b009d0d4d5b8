"""CMake-driven build for the shiftlab._core extension.

The sandbox's package index carries neither scikit-build flavor, so the
extension is built by shelling out to the repository's own CMake project and
copying the produced module where setuptools expects it.
"""

import shutil
import subprocess
import sys
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext):
        source_dir = Path(__file__).resolve().parent
        build_temp = Path(self.build_temp).resolve()
        build_temp.mkdir(parents=True, exist_ok=True)
        subprocess.run(
            [
                "cmake",
                "-S", str(source_dir),
                "-B", str(build_temp),
                "-DCMAKE_BUILD_TYPE=Release",
                f"-DPython_EXECUTABLE={sys.executable}",
                f"-DPython3_EXECUTABLE={sys.executable}",
            ],
            check=True,
        )
        subprocess.run(
            ["cmake", "--build", str(build_temp), "--target", "_core", "--parallel"],
            check=True,
        )
        # The project pins the module's LIBRARY_OUTPUT_DIRECTORY; fetch it
        # from there rather than second-guessing the platform suffix.
        built = sorted((build_temp / "python" / "shiftlab").glob("_core.*"))
        if not built:
            raise RuntimeError("cmake did not produce the _core module")
        target = Path(self.get_ext_fullpath(ext.name)).resolve()
        target.parent.mkdir(parents=True, exist_ok=True)
        shutil.copy2(built[-1], target)


setup(
    ext_modules=[CMakeExtension("shiftlab._core")],
    cmdclass={"build_ext": CMakeBuild},
)
