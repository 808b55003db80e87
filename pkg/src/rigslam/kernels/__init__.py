"""Hot per-frame kernels with selectable backend.

The numba backend is used by default; set RIGSLAM_NUMBA=0 in the
environment (or call set_backend("numpy")) to force the pure-numpy
fallback. Both backends implement identical semantics; see
benchmarks/kernel_bench.py for a speed comparison.
"""

from __future__ import annotations

import os

from . import numpy_impl

_KERNEL_NAMES = [
    "hamming_distance_matrix",
    "match_descriptors",
    "match_pair_grid",
    "match_points_grid",
    "transform_project",
    "triangulate_midpoints",
]

BACKEND = "numpy"


def _numba_requested() -> bool:
    flag = os.environ.get("RIGSLAM_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off", "")


def set_backend(name: str) -> str:
    """Switch kernel backend to "numba" or "numpy". Returns the active name."""
    global BACKEND
    if name == "numba":
        from . import numba_impl

        impl = numba_impl
    elif name == "numpy":
        impl = numpy_impl
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    g = globals()
    for fn in _KERNEL_NAMES:
        g[fn] = getattr(impl, fn)
    BACKEND = name
    return BACKEND


def warmup() -> None:
    """Trigger JIT compilation of the numba kernels on tiny inputs."""
    import numpy as np

    desc = np.zeros((2, 4), dtype=np.uint64)
    px = np.zeros((2, 2))
    hamming_distance_matrix(desc, desc)
    match_descriptors(desc, desc, 64, 0.8)
    one = np.array([0, 1], dtype=np.int64)
    starts = np.array([0, 2], dtype=np.int64)
    match_pair_grid(
        np.zeros(2, dtype=np.int64), desc, px, one, starts, desc, px,
        np.array([0, 1], dtype=np.int64), np.zeros(1, dtype=np.int64),
        np.eye(3), 64, 0.8, 2.0,
    )
    match_points_grid(px, desc, one, starts, desc, 1, 1, 45.0, 45.0, 1, 64, 0.8)
    transform_project(np.eye(3), np.zeros(3), np.ones((2, 3)), 1.0, 1.0, 0.0, 0.0)
    triangulate_midpoints(np.eye(3)[:2], np.zeros((2, 3)), np.array([0, 2], dtype=np.int64))


if _numba_requested():
    try:
        set_backend("numba")
    except Exception:  # pragma: no cover - numba missing or broken
        set_backend("numpy")
else:
    set_backend("numpy")
