"""Backend selection for the numerical kernels.

The compiled extension is used when it imports; setting
``CHAINSPEC_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

from . import _pycore

BACKENDS = {"python": _pycore}

try:
    from . import _ccore
except ImportError:  # extension not built
    _ccore = None
else:
    BACKENDS["cython"] = _ccore

if _ccore is not None and os.environ.get("CHAINSPEC_PURE_PYTHON", "") in ("", "0"):
    BACKEND = "cython"
else:
    BACKEND = "python"

_impl = BACKENDS[BACKEND]

rotations = _impl.rotations
synthesize = _impl.synthesize
frenet_backward = _impl.frenet_backward
project = _impl.project
project_backward = _impl.project_backward


def get_backend(name):
    """Return the kernel module registered under ``name``."""
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available "
                         f"(have: {sorted(BACKENDS)})") from None
