import os
import subprocess
import sys

import pytest

from msce_scr import kernels


def backend_in_subprocess(env_extra):
    env = dict(os.environ, **env_extra)
    out = subprocess.run(
        [sys.executable, "-c", "import msce_scr.kernels as k; print(k.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    return out.stdout.strip()


def test_pure_python_can_be_forced():
    assert backend_in_subprocess({"MSCE_SCR_PURE": "1"}) == "python"


def test_default_prefers_compiled():
    expected = "cython" if "cython" in kernels.BACKENDS else "python"
    assert backend_in_subprocess({}) == expected


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")
