"""Traversal kernel backend selection.

The compiled extension is preferred when importable; the numpy fallback
has identical semantics.  Set ``NANN_KERNELS=python`` or
``NANN_KERNELS=compiled`` to force one (forcing ``compiled`` raises if the
extension is missing rather than silently degrading).
"""

from __future__ import annotations

import os

from . import _pyhot

_forced = os.environ.get("NANN_KERNELS", "").strip().lower()
if _forced == "python":
    _impl = _pyhot
elif _forced == "compiled":
    from . import _chot as _impl
else:
    try:
        from . import _chot as _impl
    except ImportError:
        _impl = _pyhot

backend_name = _impl.backend_name
search_layer = _impl.search_layer


def available_backends() -> list[str]:
    names = ["python"]
    try:
        from . import _chot  # noqa: F401

        names.insert(0, "compiled")
    except ImportError:
        pass
    return names


def get_backend(name: str):
    """Fetch a backend module by name (for benchmarks and parity tests)."""
    if name == "python":
        return _pyhot
    if name == "compiled":
        from . import _chot

        return _chot
    raise ValueError(f"unknown kernel backend {name!r}")
