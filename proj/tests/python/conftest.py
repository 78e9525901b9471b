"""Make the `kmpc` package importable without an installed wheel by wiring
the CMake-built extension into the source package directory."""

import glob
import os
import shutil
import sys

REPO_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", ".."))


def _ensure_package():
    try:
        import kmpc  # noqa: F401
        return
    except ImportError:
        pass

    pkg_dir = os.path.join(REPO_ROOT, "python", "kmpc")
    build_dir = os.environ.get("KMPC_BUILD_DIR", os.path.join(REPO_ROOT, "build"))
    candidates = glob.glob(os.path.join(build_dir, "_core*.so"))
    if candidates:
        target = os.path.join(pkg_dir, os.path.basename(candidates[0]))
        if not os.path.exists(target) or os.path.getmtime(candidates[0]) > os.path.getmtime(target):
            shutil.copy2(candidates[0], target)
    sys.path.insert(0, os.path.join(REPO_ROOT, "python"))


_ensure_package()
