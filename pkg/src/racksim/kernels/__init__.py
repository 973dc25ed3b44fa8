"""FTL hot kernels.

The compiled extension is used when it imports; otherwise the pure-Python
twin. Set RACKSIM_BACKEND=python to force the fallback.
"""

import os

from . import _ftl_py

BACKEND = "python"
FtlCore = _ftl_py.FtlCore

if os.environ.get("RACKSIM_BACKEND", "").lower() != "python":
    try:
        from . import _ftl_ext

        FtlCore = _ftl_ext.FtlCore
        BACKEND = "cython"
    except ImportError:
        pass


def backends():
    """Every importable backend, keyed by name."""
    out = {"python": _ftl_py.FtlCore}
    try:
        from . import _ftl_ext

        out["cython"] = _ftl_ext.FtlCore
    except ImportError:
        pass
    return out


__all__ = ["BACKEND", "FtlCore", "backends"]
