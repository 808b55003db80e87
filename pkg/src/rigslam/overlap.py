"""Grid-based shared field-of-view maps between rig camera pairs.

For every ordered camera pair the image of camera i is divided into a 2D
grid; each cell is mapped to the set of cells in camera j that its
epipolar line can traverse. Built once per rig, immutable afterwards.

Two robustness refinements over the plain epipolar-line test:
  * the line is clipped to the positive-depth portion in both cameras
    before rasterizing, so back-to-back cameras report no overlap,
  * candidate cells are dilated by a padding margin to absorb the
    cell-center approximation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calibration import RigCalibration
from .geometry import skew

EPS_BASELINE = 1e-6
_EPS_DEPTH = 1e-6
_FAR_LAMBDA = 1e14

DEFAULT_GRID_ROWS = 12
DEFAULT_GRID_COLS = 16
DEFAULT_PADDING = 1


def fundamental_matrix(rig: RigCalibration, i: int, j: int) -> np.ndarray:
    """Fundamental matrix with x_j^T F x_i = 0 for pixels of a common point.

    Returns the all-zero matrix as the degenerate-baseline signal when the
    camera centers are within EPS_BASELINE of each other (callers fall back
    to the pure-rotation mapping).
    """
    if i == j:
        raise ValueError("fundamental matrix needs two distinct cameras")
    T = rig.relative_pose(i, j)
    R, t = T.rotation, T.translation
    if np.linalg.norm(t) < EPS_BASELINE:
        return np.zeros((3, 3))
    Kj_inv_T = rig.intrinsics(j).K_inv.T
    Ki_inv = rig.intrinsics(i).K_inv
    return Kj_inv_T @ skew(t) @ R @ Ki_inv


@dataclass
class OverlapMap:
    """Per-pair cell candidate tables over a shared grid layout."""

    grid_rows: int
    grid_cols: int
    padding: int
    tables: dict = field(default_factory=dict)  # (i, j) -> list of int64 arrays per cell
    pair_overlaps: dict = field(default_factory=dict)
    _csr_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_cells(self) -> int:
        return self.grid_rows * self.grid_cols

    def candidates(self, i: int, j: int, cell: int) -> np.ndarray:
        return self.tables[(i, j)][cell]

    def csr(self, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Flattened candidate table (starts, flat) for the matching kernels."""
        key = (i, j)
        if key not in self._csr_cache:
            table = self.tables[key]
            counts = np.array([len(c) for c in table], dtype=np.int64)
            starts = np.zeros(len(table) + 1, dtype=np.int64)
            np.cumsum(counts, out=starts[1:])
            flat = (
                np.concatenate(table).astype(np.int64)
                if starts[-1] > 0
                else np.empty(0, dtype=np.int64)
            )
            self._csr_cache[key] = (starts, flat)
        return self._csr_cache[key]


def cell_of_points(
    px: np.ndarray, width: float, height: float, grid_rows: int, grid_cols: int
) -> np.ndarray:
    """Grid cell index (row-major) for (n, 2) pixels inside the image."""
    px = np.atleast_2d(px)
    col = np.clip((px[:, 0] / (width / grid_cols)).astype(np.int64), 0, grid_cols - 1)
    row = np.clip((px[:, 1] / (height / grid_rows)).astype(np.int64), 0, grid_rows - 1)
    return row * grid_cols + col


def _dilate_cells(cells: set, grid_rows: int, grid_cols: int, padding: int) -> np.ndarray:
    if not cells:
        return np.empty(0, dtype=np.int64)
    if padding <= 0:
        return np.array(sorted(cells), dtype=np.int64)
    out = set()
    for cell in cells:
        r, c = divmod(cell, grid_cols)
        for rr in range(max(0, r - padding), min(grid_rows, r + padding + 1)):
            for cc in range(max(0, c - padding), min(grid_cols, c + padding + 1)):
                out.add(rr * grid_cols + cc)
    return np.array(sorted(out), dtype=np.int64)


def _segment_cells(
    p0: np.ndarray, p1: np.ndarray, width: float, height: float, grid_rows: int, grid_cols: int
) -> set:
    """Cells touched by uniform samples at half-cell steps along a segment."""
    cell_w = width / grid_cols
    cell_h = height / grid_rows
    step = 0.5 * min(cell_w, cell_h)
    length = float(np.linalg.norm(p1 - p0))
    n = max(2, int(np.ceil(length / step)) + 1)
    ts = np.linspace(0.0, 1.0, n)
    pts = p0[None, :] + ts[:, None] * (p1 - p0)[None, :]
    return set(cell_of_points(pts, width, height, grid_rows, grid_cols).tolist())


def _pair_table(
    rig: RigCalibration, i: int, j: int, grid_rows: int, grid_cols: int, padding: int
) -> list:
    Ki = rig.intrinsics(i)
    Kj = rig.intrinsics(j)
    T = rig.relative_pose(i, j)
    R, t = T.rotation, T.translation
    wj, hj = float(Kj.width), float(Kj.height)
    cell_w_i = Ki.width / grid_cols
    cell_h_i = Ki.height / grid_rows

    rotation_only = np.linalg.norm(t) < EPS_BASELINE
    H = Kj.K @ R @ Ki.K_inv if rotation_only else None
    b = Kj.K @ t

    table = []
    for r in range(grid_rows):
        for c in range(grid_cols):
            center = np.array([(c + 0.5) * cell_w_i, (r + 0.5) * cell_h_i, 1.0])
            if rotation_only:
                p = H @ center
                if p[2] <= _EPS_DEPTH:
                    table.append(np.empty(0, dtype=np.int64))
                    continue
                uv = p[:2] / p[2]
                if not (0 <= uv[0] < wj and 0 <= uv[1] < hj):
                    table.append(np.empty(0, dtype=np.int64))
                    continue
                cell = int(cell_of_points(uv[None, :], wj, hj, grid_rows, grid_cols)[0])
                table.append(_dilate_cells({cell}, grid_rows, grid_cols, padding))
                continue

            d = Ki.K_inv @ center
            a = Kj.K @ (R @ d)
            # admissible ray depths: linear constraints c1 * lam + c0 >= 0
            constraints = [
                (1.0, -_EPS_DEPTH),                      # in front of camera i
                (a[2], b[2] - _EPS_DEPTH),               # in front of camera j
                (a[0], b[0]),                            # x >= 0
                (wj * a[2] - a[0], wj * b[2] - b[0]),    # x <= W
                (a[1], b[1]),                            # y >= 0
                (hj * a[2] - a[1], hj * b[2] - b[1]),    # y <= H
            ]
            lo, hi = 0.0, np.inf
            feasible = True
            for c1, c0 in constraints:
                if abs(c1) < 1e-15:
                    if c0 < 0:
                        feasible = False
                        break
                    continue
                root = -c0 / c1
                if c1 > 0:
                    lo = max(lo, root)
                else:
                    hi = min(hi, root)
            if not feasible or lo >= hi:
                table.append(np.empty(0, dtype=np.int64))
                continue
            p_lo = a * lo + b
            p0 = p_lo[:2] / p_lo[2]
            if hi > _FAR_LAMBDA:
                p1 = a[:2] / a[2]
            else:
                p_hi = a * hi + b
                p1 = p_hi[:2] / p_hi[2]
            cells = _segment_cells(p0, p1, wj, hj, grid_rows, grid_cols)
            table.append(_dilate_cells(cells, grid_rows, grid_cols, padding))
    return table


def compute_overlap_map(
    rig: RigCalibration,
    grid_rows: int = DEFAULT_GRID_ROWS,
    grid_cols: int = DEFAULT_GRID_COLS,
    padding: int = DEFAULT_PADDING,
) -> OverlapMap:
    """Candidate-cell tables for every ordered camera pair of the rig."""
    if grid_rows < 1 or grid_cols < 1:
        raise ValueError("grid dimensions must be >= 1")
    omap = OverlapMap(grid_rows=grid_rows, grid_cols=grid_cols, padding=padding)
    n = rig.n_cameras
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            table = _pair_table(rig, i, j, grid_rows, grid_cols, padding)
            omap.tables[(i, j)] = table
            omap.pair_overlaps[(i, j)] = any(len(cands) > 0 for cands in table)
    return omap


def overlap_report(omap: OverlapMap, rig: RigCalibration) -> list[dict]:
    """Per-pair summary rows: overlap flag and fraction of non-empty cells."""
    rows = []
    for i in range(rig.n_cameras):
        for j in range(rig.n_cameras):
            if i == j:
                continue
            table = omap.tables[(i, j)]
            frac = sum(1 for c in table if len(c) > 0) / len(table)
            rows.append(
                {
                    "camera_i": rig.cameras[i].camera_id,
                    "camera_j": rig.cameras[j].camera_id,
                    "overlapping": omap.pair_overlaps[(i, j)],
                    "nonempty_cell_fraction": frac,
                }
            )
    return rows
