"""Pure-numpy implementations of the hot per-frame kernels.

Reference semantics for the numba twins in numba_impl.py: every function
here must produce identical outputs (bit-identical for the integer
matching kernels) for the same inputs.
"""

from __future__ import annotations

import numpy as np

_NO_MATCH = -1


def hamming_distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise Hamming distances between packed (n,4)/(m,4) uint64 descriptor sets."""
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]), dtype=np.int32)
    x = np.bitwise_xor(a[:, None, :], b[None, :, :])
    return np.bitwise_count(x).sum(axis=2, dtype=np.int32)


def _best_two(dists: np.ndarray) -> tuple[int, int, int]:
    """(best index, best dist, second dist) with first-occurrence tie-break."""
    best = int(np.argmin(dists))
    best_d = int(dists[best])
    if dists.shape[0] == 1:
        return best, best_d, -1
    rest = np.delete(dists, best)
    return best, best_d, int(rest.min())


def match_descriptors(
    query: np.ndarray, train: np.ndarray, max_dist: int, ratio: float
) -> tuple[np.ndarray, np.ndarray]:
    """Best train match per query descriptor with distance and ratio gates.

    Returns (index, distance) arrays; index is -1 where no match passed.
    """
    nq = query.shape[0]
    idx = np.full(nq, _NO_MATCH, dtype=np.int64)
    dist = np.full(nq, -1, dtype=np.int64)
    if nq == 0 or train.shape[0] == 0:
        return idx, dist
    D = hamming_distance_matrix(query, train)
    for k in range(nq):
        best, best_d, second_d = _best_two(D[k])
        if best_d > max_dist:
            continue
        if second_d >= 0 and best_d > ratio * second_d:
            continue
        idx[k] = best
        dist[k] = best_d
    return idx, dist


def _epipolar_distance(F: np.ndarray, p1: np.ndarray, p2: np.ndarray) -> float:
    line = F @ np.array([p1[0], p1[1], 1.0])
    nrm = np.hypot(line[0], line[1])
    if nrm < 1e-15:
        return np.inf
    return abs(line[0] * p2[0] + line[1] * p2[1] + line[2]) / nrm


def _candidate_rows(
    cand_cells: np.ndarray, cell_start: np.ndarray, order: np.ndarray
) -> np.ndarray:
    chunks = [order[cell_start[c] : cell_start[c + 1]] for c in cand_cells]
    if not chunks:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(chunks)


def match_pair_grid(
    cells_a: np.ndarray,
    desc_a: np.ndarray,
    px_a: np.ndarray,
    order_b: np.ndarray,
    cell_start_b: np.ndarray,
    desc_b: np.ndarray,
    px_b: np.ndarray,
    cand_start: np.ndarray,
    cand_flat: np.ndarray,
    F: np.ndarray,
    max_dist: int,
    ratio: float,
    epi_gate: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Cell-wise brute-force matching of camera a's keypoints into camera b.

    Candidates for a keypoint in cell c of camera a are camera b's keypoints
    inside cand_flat[cand_start[c]:cand_start[c+1]] (grid cells from the
    overlap map). A match must pass the Hamming gate, the best/second ratio
    over the candidate set and the point-to-epipolar-line gate.
    """
    na = cells_a.shape[0]
    best_idx = np.full(na, _NO_MATCH, dtype=np.int64)
    best_dist = np.full(na, -1, dtype=np.int64)
    for k in range(na):
        c = int(cells_a[k])
        cand = _candidate_rows(cand_flat[cand_start[c] : cand_start[c + 1]], cell_start_b, order_b)
        if cand.shape[0] == 0:
            continue
        dists = np.bitwise_count(np.bitwise_xor(desc_a[k][None, :], desc_b[cand])).sum(
            axis=1, dtype=np.int64
        )
        best, best_d, second_d = _best_two(dists)
        if best_d > max_dist:
            continue
        if second_d >= 0 and best_d > ratio * second_d:
            continue
        j = int(cand[best])
        if _epipolar_distance(F, px_a[k], px_b[j]) > epi_gate:
            continue
        best_idx[k] = j
        best_dist[k] = best_d
    return best_idx, best_dist


def match_points_grid(
    proj: np.ndarray,
    desc_q: np.ndarray,
    order_b: np.ndarray,
    cell_start_b: np.ndarray,
    desc_b: np.ndarray,
    grid_rows: int,
    grid_cols: int,
    cell_w: float,
    cell_h: float,
    radius_cells: int,
    max_dist: int,
    ratio: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Match query descriptors to keypoints near predicted projections.

    The search window for query k is the (2r+1)^2 block of grid cells
    around the cell containing proj[k].
    """
    nq = proj.shape[0]
    best_idx = np.full(nq, _NO_MATCH, dtype=np.int64)
    best_dist = np.full(nq, -1, dtype=np.int64)
    for k in range(nq):
        col = int(proj[k, 0] / cell_w)
        row = int(proj[k, 1] / cell_h)
        cells = []
        for r in range(max(0, row - radius_cells), min(grid_rows, row + radius_cells + 1)):
            for c in range(max(0, col - radius_cells), min(grid_cols, col + radius_cells + 1)):
                cells.append(r * grid_cols + c)
        cand = _candidate_rows(np.array(cells, dtype=np.int64), cell_start_b, order_b)
        if cand.shape[0] == 0:
            continue
        dists = np.bitwise_count(np.bitwise_xor(desc_q[k][None, :], desc_b[cand])).sum(
            axis=1, dtype=np.int64
        )
        best, best_d, second_d = _best_two(dists)
        if best_d > max_dist:
            continue
        if second_d >= 0 and best_d > ratio * second_d:
            continue
        best_idx[k] = int(cand[best])
        best_dist[k] = best_d
    return best_idx, best_dist


def transform_project(
    R: np.ndarray,
    t: np.ndarray,
    points: np.ndarray,
    fx: float,
    fy: float,
    cx: float,
    cy: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Rigidly transform points into a camera frame and project.

    Returns (uv, depth); uv rows with depth <= 0 hold no meaningful values
    and must be masked by the caller.
    """
    p_cam = points @ R.T + t
    depth = p_cam[:, 2].copy()
    z = np.where(np.abs(depth) < 1e-300, 1.0, depth)
    uv = np.empty((points.shape[0], 2))
    uv[:, 0] = fx * p_cam[:, 0] / z + cx
    uv[:, 1] = fy * p_cam[:, 1] / z + cy
    return uv, depth


def triangulate_midpoints(
    dirs: np.ndarray, feet: np.ndarray, group_start: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares point closest to each group of rays.

    Rays are given as unit directions plus the foot point closest to the
    frame origin (q x m); groups are contiguous index ranges. ok[g] is
    False when the 3x3 normal matrix is near singular (parallel rays).
    """
    n_groups = group_start.shape[0] - 1
    points = np.zeros((n_groups, 3))
    ok = np.zeros(n_groups, dtype=np.bool_)
    eye = np.eye(3)
    for g in range(n_groups):
        lo, hi = int(group_start[g]), int(group_start[g + 1])
        if hi - lo < 2:
            continue
        q = dirs[lo:hi]
        M = (hi - lo) * eye - q.T @ q
        rhs = feet[lo:hi].sum(axis=0) - q.T @ (q * feet[lo:hi]).sum(axis=1)
        det = np.linalg.det(M)
        if abs(det) < 1e-9:
            continue
        points[g] = np.linalg.solve(M, rhs)
        ok[g] = True
    return points, ok
