"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the pure-Python
module takes over. Set ``NUESCHED_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("NUESCHED_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

carve_maze = _impl.carve_maze
layout_key_door = _impl.layout_key_door
grid_step = _impl.grid_step
encode_grid_obs = _impl.encode_grid_obs
gae = _impl.gae

__all__ = [
    "BACKEND",
    "carve_maze",
    "layout_key_door",
    "grid_step",
    "encode_grid_obs",
    "gae",
]
