"""Kernel backend selection.

The compiled Cython extension is preferred when it imported cleanly; the
pure numpy twin is used otherwise.  Set ``DUALDOMAIN_PURE=1`` to force the
fallback (useful for benchmarking the two against each other).
"""

import os

from . import _kernels_py

_pure_forced = os.environ.get("DUALDOMAIN_PURE", "") not in ("", "0")

if _pure_forced:
    _active = _kernels_py
else:
    try:
        from . import _kernels as _compiled
        _active = _compiled
    except ImportError:
        _active = _kernels_py

BACKEND = _active.NAME


def kernels(name: str | None = None):
    """Return the active kernel module, or a specific one by name."""
    if name is None:
        return _active
    if name == "pure":
        return _kernels_py
    if name == "compiled":
        from . import _kernels  # raises ImportError if not built
        return _kernels
    raise ValueError(f"unknown backend {name!r}")


def available_backends() -> list[str]:
    names = ["pure"]
    try:
        from . import _kernels  # noqa: F401
        names.insert(0, "compiled")
    except ImportError:
        pass
    return names
