"""Numba twins of the numpy kernels; same semantics, loop-compiled.

The matching kernels iterate candidates in exactly the same order as the
numpy implementations so integer results are bit-identical across
backends.
"""

from __future__ import annotations

import numba
import numpy as np

_NO_MATCH = -1

_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)
_S1 = np.uint64(1)
_S2 = np.uint64(2)
_S4 = np.uint64(4)
_S56 = np.uint64(56)


@numba.njit(inline="always")
def _popcount64(x):
    x = x - ((x >> _S1) & _M1)
    x = (x & _M2) + ((x >> _S2) & _M2)
    x = (x + (x >> _S4)) & _M4
    return (x * _H01) >> _S56


@numba.njit(inline="always")
def _hamming4(a, b, i, j):
    d = np.uint64(0)
    for w in range(4):
        d += _popcount64(a[i, w] ^ b[j, w])
    return np.int64(d)


@numba.njit(cache=True)
def hamming_distance_matrix(a, b):
    out = np.zeros((a.shape[0], b.shape[0]), dtype=np.int32)
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            out[i, j] = _hamming4(a, b, i, j)
    return out


@numba.njit(cache=True)
def match_descriptors(query, train, max_dist, ratio):
    nq = query.shape[0]
    nt = train.shape[0]
    idx = np.full(nq, _NO_MATCH, dtype=np.int64)
    dist = np.full(nq, -1, dtype=np.int64)
    for k in range(nq):
        best = -1
        best_d = np.int64(1 << 30)
        second_d = np.int64(1 << 30)
        for j in range(nt):
            d = _hamming4(query, train, k, j)
            if d < best_d:
                second_d = best_d
                best_d = d
                best = j
            elif d < second_d:
                second_d = d
        if best < 0 or best_d > max_dist:
            continue
        if nt > 1 and best_d > ratio * second_d:
            continue
        idx[k] = best
        dist[k] = best_d
    return idx, dist


@numba.njit(inline="always")
def _epipolar_distance(F, x1, y1, x2, y2):
    l0 = F[0, 0] * x1 + F[0, 1] * y1 + F[0, 2]
    l1 = F[1, 0] * x1 + F[1, 1] * y1 + F[1, 2]
    l2 = F[2, 0] * x1 + F[2, 1] * y1 + F[2, 2]
    nrm = np.sqrt(l0 * l0 + l1 * l1)
    if nrm < 1e-15:
        return np.inf
    return abs(l0 * x2 + l1 * y2 + l2) / nrm


@numba.njit(cache=True)
def match_pair_grid(
    cells_a,
    desc_a,
    px_a,
    order_b,
    cell_start_b,
    desc_b,
    px_b,
    cand_start,
    cand_flat,
    F,
    max_dist,
    ratio,
    epi_gate,
):
    na = cells_a.shape[0]
    best_idx = np.full(na, _NO_MATCH, dtype=np.int64)
    best_dist = np.full(na, -1, dtype=np.int64)
    for k in range(na):
        c = cells_a[k]
        best = -1
        best_d = np.int64(1 << 30)
        second_d = np.int64(1 << 30)
        n_cand = 0
        for ci in range(cand_start[c], cand_start[c + 1]):
            cc = cand_flat[ci]
            for oi in range(cell_start_b[cc], cell_start_b[cc + 1]):
                j = order_b[oi]
                n_cand += 1
                d = _hamming4(desc_a, desc_b, k, j)
                if d < best_d:
                    second_d = best_d
                    best_d = d
                    best = j
                elif d < second_d:
                    second_d = d
        if best < 0 or best_d > max_dist:
            continue
        if n_cand > 1 and best_d > ratio * second_d:
            continue
        if _epipolar_distance(F, px_a[k, 0], px_a[k, 1], px_b[best, 0], px_b[best, 1]) > epi_gate:
            continue
        best_idx[k] = best
        best_dist[k] = best_d
    return best_idx, best_dist


@numba.njit(cache=True)
def match_points_grid(
    proj,
    desc_q,
    order_b,
    cell_start_b,
    desc_b,
    grid_rows,
    grid_cols,
    cell_w,
    cell_h,
    radius_cells,
    max_dist,
    ratio,
):
    nq = proj.shape[0]
    best_idx = np.full(nq, _NO_MATCH, dtype=np.int64)
    best_dist = np.full(nq, -1, dtype=np.int64)
    for k in range(nq):
        col = np.int64(proj[k, 0] / cell_w)
        row = np.int64(proj[k, 1] / cell_h)
        best = -1
        best_d = np.int64(1 << 30)
        second_d = np.int64(1 << 30)
        n_cand = 0
        r_lo = max(0, row - radius_cells)
        r_hi = min(grid_rows, row + radius_cells + 1)
        c_lo = max(0, col - radius_cells)
        c_hi = min(grid_cols, col + radius_cells + 1)
        for r in range(r_lo, r_hi):
            for c in range(c_lo, c_hi):
                cc = r * grid_cols + c
                for oi in range(cell_start_b[cc], cell_start_b[cc + 1]):
                    j = order_b[oi]
                    n_cand += 1
                    d = _hamming4(desc_q, desc_b, k, j)
                    if d < best_d:
                        second_d = best_d
                        best_d = d
                        best = j
                    elif d < second_d:
                        second_d = d
        if best < 0 or best_d > max_dist:
            continue
        if n_cand > 1 and best_d > ratio * second_d:
            continue
        best_idx[k] = best
        best_dist[k] = best_d
    return best_idx, best_dist


@numba.njit(cache=True)
def transform_project(R, t, points, fx, fy, cx, cy):
    n = points.shape[0]
    uv = np.empty((n, 2))
    depth = np.empty(n)
    for i in range(n):
        x = R[0, 0] * points[i, 0] + R[0, 1] * points[i, 1] + R[0, 2] * points[i, 2] + t[0]
        y = R[1, 0] * points[i, 0] + R[1, 1] * points[i, 1] + R[1, 2] * points[i, 2] + t[1]
        z = R[2, 0] * points[i, 0] + R[2, 1] * points[i, 1] + R[2, 2] * points[i, 2] + t[2]
        depth[i] = z
        zz = z if abs(z) >= 1e-300 else 1.0
        uv[i, 0] = fx * x / zz + cx
        uv[i, 1] = fy * y / zz + cy
    return uv, depth


@numba.njit(cache=True)
def triangulate_midpoints(dirs, feet, group_start):
    n_groups = group_start.shape[0] - 1
    points = np.zeros((n_groups, 3))
    ok = np.zeros(n_groups, dtype=np.bool_)
    for g in range(n_groups):
        lo = group_start[g]
        hi = group_start[g + 1]
        k = hi - lo
        if k < 2:
            continue
        m00 = m01 = m02 = m11 = m12 = m22 = 0.0
        r0 = r1 = r2 = 0.0
        for i in range(lo, hi):
            qx, qy, qz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
            px, py, pz = feet[i, 0], feet[i, 1], feet[i, 2]
            m00 += 1.0 - qx * qx
            m01 += -qx * qy
            m02 += -qx * qz
            m11 += 1.0 - qy * qy
            m12 += -qy * qz
            m22 += 1.0 - qz * qz
            dp = qx * px + qy * py + qz * pz
            r0 += px - qx * dp
            r1 += py - qy * dp
            r2 += pz - qz * dp
        det = (
            m00 * (m11 * m22 - m12 * m12)
            - m01 * (m01 * m22 - m12 * m02)
            + m02 * (m01 * m12 - m11 * m02)
        )
        if abs(det) < 1e-9:
            continue
        i00 = m11 * m22 - m12 * m12
        i01 = m02 * m12 - m01 * m22
        i02 = m01 * m12 - m02 * m11
        i11 = m00 * m22 - m02 * m02
        i12 = m01 * m02 - m00 * m12
        i22 = m00 * m11 - m01 * m01
        points[g, 0] = (i00 * r0 + i01 * r1 + i02 * r2) / det
        points[g, 1] = (i01 * r0 + i11 * r1 + i12 * r2) / det
        points[g, 2] = (i02 * r0 + i12 * r1 + i22 * r2) / det
        ok[g] = True
    return points, ok
