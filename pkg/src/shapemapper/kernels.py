"""Backend selection for the hot loops.

The compiled extension ``_kernels`` is used when it imports; otherwise the
pure-Python twins in ``_fallback`` take over.  Set ``SHAPEMAPPER_PURE_PYTHON=1``
to force the fallback.
"""

import os

from . import _fallback

BACKENDS = {"python": _fallback}

try:
    from . import _kernels

    BACKENDS["cython"] = _kernels
except ImportError:  # extension not built
    _kernels = None

if os.environ.get("SHAPEMAPPER_PURE_PYTHON", "") not in ("", "0") or _kernels is None:
    BACKEND = "python"
else:
    BACKEND = "cython"


def get(name=None):
    """Kernel module for ``name`` (default: the selected backend)."""
    name = name or BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
