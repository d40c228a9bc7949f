"""Backend selection for the hot loops.

Set ``LOCALGIBBS_DISABLE_NUMBA=1`` before import to force the pure-numpy
kernels. When numba is not installed the numpy kernels are used silently.
"""
import os

_FLAG = "LOCALGIBBS_DISABLE_NUMBA"

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get(_FLAG, "").strip().lower() not in (
    "1",
    "true",
    "yes",
)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
