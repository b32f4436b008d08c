"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``ENERGYREF_DISABLE_NUMBA`` is unset or falsy. Both backends are
importable side by side through :func:`get_backend` for testing and
benchmarking.
"""

from __future__ import annotations

import importlib
import os
from types import ModuleType

_FALSY = {"", "0", "false", "no", "off"}
KERNELS = (
    "iou_matrix",
    "greedy_match",
    "average_precision",
    "trapezoid",
    "pairwise_within",
    "pairwise_cross",
)


def numba_disabled() -> bool:
    return os.environ.get("ENERGYREF_DISABLE_NUMBA", "").strip().lower() not in _FALSY


def get_backend(name: str) -> ModuleType:
    """Return the kernel module for ``"numba"`` or ``"numpy"``."""
    if name == "numpy":
        return importlib.import_module("energyref.kernels._numpy")
    if name == "numba":
        return importlib.import_module("energyref.kernels._numba")
    raise ValueError(f"unknown kernel backend {name!r}")


def _select() -> tuple[str, ModuleType]:
    if not numba_disabled():
        try:
            return "numba", get_backend("numba")
        except ImportError:
            pass
    return "numpy", get_backend("numpy")


BACKEND, _impl = _select()

iou_matrix = _impl.iou_matrix
greedy_match = _impl.greedy_match
average_precision = _impl.average_precision
trapezoid = _impl.trapezoid
pairwise_within = _impl.pairwise_within
pairwise_cross = _impl.pairwise_cross

__all__ = ["BACKEND", "KERNELS", "get_backend", "numba_disabled", *KERNELS]
