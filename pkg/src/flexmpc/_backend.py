"""Numerical backend selection.

The compiled extension (``flexmpc._kernels``) is preferred when present;
setting the environment variable ``FLEXMPC_PURE_PYTHON=1`` forces the
pure-numpy fallback.  Both expose the same kernel API.
"""

import os

if os.environ.get("FLEXMPC_PURE_PYTHON", "") not in ("", "0"):
    from . import _kernels_py as kernels
else:
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        from . import _kernels_py as kernels  # type: ignore[no-redef]

BACKEND = kernels.BACKEND_NAME


def using_compiled() -> bool:
    return BACKEND == "cython"
