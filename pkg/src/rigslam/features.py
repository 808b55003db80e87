"""Per-camera keypoints, cross-camera intra-matching and track-file I/O.

Keypoints arrive from a pluggable provider (file ingestion or the
synthetic source in sim.py), get binned into the overlap grid, and are
fused into multi-view features by cell-wise Hamming matching across every
camera pair. Keypoints without a cross-camera group become mono features.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from . import descriptors as desc
from . import kernels
from .calibration import RigCalibration
from .geometry import Pose, PluckerRay, pixel_to_plucker
from .overlap import OverlapMap, cell_of_points
from .solvers import triangulate  # noqa: F401  (re-exported for group gating)


@dataclass(frozen=True)
class Keypoint:
    camera_index: int
    keypoint_id: int
    pixel: np.ndarray
    cell: int
    octave: int
    descriptor: np.ndarray


@dataclass(frozen=True)
class DetectedFeatures:
    """Raw per-camera detector output before grid binning."""

    pixels: np.ndarray  # (n, 2)
    octaves: np.ndarray  # (n,)
    descriptors: np.ndarray  # (n, 4) packed uint64
    ids: np.ndarray | None = None  # optional external keypoint ids

    @staticmethod
    def empty() -> "DetectedFeatures":
        return DetectedFeatures(
            np.empty((0, 2)), np.empty(0, dtype=np.int64), desc.empty(0)
        )


@dataclass
class FrameInput:
    """One multi-camera frame of raw detections, as fed to the pipeline.

    labels, when present, carry the ground-truth landmark id per keypoint
    (simulator output); real data sources leave it None.
    """

    frame_id: int
    timestamp: float
    features: list  # DetectedFeatures per camera
    labels: list | None = None


@dataclass
class CameraFeatures:
    """One camera's keypoints, binned into the grid and sorted for lookup."""

    camera_index: int
    pixels: np.ndarray
    octaves: np.ndarray
    descriptors: np.ndarray
    cells: np.ndarray
    ids: np.ndarray
    grid_rows: int
    grid_cols: int
    cell_order: np.ndarray = field(init=False)
    cell_start: np.ndarray = field(init=False)

    def __post_init__(self):
        n_cells = self.grid_rows * self.grid_cols
        order = np.argsort(self.cells, kind="stable").astype(np.int64)
        counts = np.bincount(self.cells, minlength=n_cells) if len(self.cells) else np.zeros(n_cells, dtype=np.int64)
        starts = np.zeros(n_cells + 1, dtype=np.int64)
        np.cumsum(counts, out=starts[1:])
        self.cell_order = order
        self.cell_start = starts

    def __len__(self) -> int:
        return self.pixels.shape[0]

    def index_of(self, keypoint_id: int) -> int:
        k = int(np.searchsorted(self.ids, keypoint_id))
        if k >= len(self.ids) or self.ids[k] != keypoint_id:
            raise KeyError(f"keypoint id {keypoint_id} not in camera {self.camera_index}")
        return k

    def keypoint(self, index: int) -> Keypoint:
        return Keypoint(
            camera_index=self.camera_index,
            keypoint_id=int(self.ids[index]),
            pixel=self.pixels[index].copy(),
            cell=int(self.cells[index]),
            octave=int(self.octaves[index]),
            descriptor=self.descriptors[index].copy(),
        )


@dataclass(frozen=True)
class MultiViewFeature:
    """Cross-camera intra-match: (camera, keypoint index) members plus the
    triangulated body-frame point and the representative descriptor."""

    members: tuple  # ((camera_index, keypoint_index), ...)
    point_body: np.ndarray
    descriptor: np.ndarray

    @property
    def n_views(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class MonoFeature:
    camera_index: int
    keypoint_index: int


@dataclass
class MultiCameraFrame:
    frame_id: int
    timestamp: float
    cameras: list  # CameraFeatures per camera
    multiview: list = field(default_factory=list)
    mono: list = field(default_factory=list)

    def keypoint(self, camera_index: int, keypoint_index: int) -> Keypoint:
        return self.cameras[camera_index].keypoint(keypoint_index)

    @property
    def n_keypoints(self) -> int:
        return sum(len(c) for c in self.cameras)


@dataclass(frozen=True)
class MatchParams:
    max_hamming: int = 64
    ratio: float = 0.8
    epipolar_gate_px: float = 2.0
    tri_max_reproj_px: float = 2.0
    tri_min_parallax_deg: float = 1.0


def representative_descriptor(descriptor_set) -> np.ndarray:
    """Bitwise majority over a non-empty descriptor set (ties: first wins)."""
    arr = np.asarray(descriptor_set, dtype=np.uint64)
    return desc.majority_descriptor(arr)


def detect(
    inputs: list, rig: RigCalibration, grid_rows: int, grid_cols: int
) -> list:
    """Bin provider output into grid cells, one CameraFeatures per camera."""
    if len(inputs) != rig.n_cameras:
        raise ValueError(f"expected {rig.n_cameras} camera inputs, got {len(inputs)}")
    out = []
    for cam_idx, raw in enumerate(inputs):
        K = rig.intrinsics(cam_idx)
        px = np.asarray(raw.pixels, dtype=float).reshape(-1, 2)
        if px.shape[0] and not np.all(K.contains(px)):
            bad = np.flatnonzero(~K.contains(px))[0]
            raise ValueError(
                f"camera {cam_idx}: keypoint {bad} at {px[bad]} outside {K.width}x{K.height}"
            )
        ids = raw.ids if raw.ids is not None else np.arange(px.shape[0], dtype=np.int64)
        order = np.argsort(ids, kind="stable")
        px = px[order]
        ids = np.asarray(ids, dtype=np.int64)[order]
        octaves = np.asarray(raw.octaves, dtype=np.int64)[order]
        descs = np.asarray(raw.descriptors, dtype=np.uint64).reshape(-1, 4)[order]
        cells = (
            cell_of_points(px, K.width, K.height, grid_rows, grid_cols)
            if px.shape[0]
            else np.empty(0, dtype=np.int64)
        )
        out.append(
            CameraFeatures(
                camera_index=cam_idx,
                pixels=px,
                octaves=octaves,
                descriptors=descs,
                cells=cells,
                ids=ids,
                grid_rows=grid_rows,
                grid_cols=grid_cols,
            )
        )
    return out


def _pairwise_parallax_ok(dirs: np.ndarray, min_deg: float) -> bool:
    cosang = np.abs(np.clip(dirs @ dirs.T, -1.0, 1.0))
    np.fill_diagonal(cosang, 1.0)
    return np.degrees(np.arccos(cosang.min())) >= min_deg


def intra_match(
    cameras: list,
    omap: OverlapMap,
    rig: RigCalibration,
    params: MatchParams = MatchParams(),
    pair_order=None,
) -> tuple[list, list]:
    """Fuse per-camera keypoints into multi-view features.

    Match growth over camera pairs: a match between two ungrouped keypoints
    opens a group; a match touching one grouped keypoint joins it unless the
    group already holds that camera; a match between two distinct groups is
    discarded. Surviving groups are triangulated in the body frame and
    dissolve to mono features when the reprojection/parallax gate fails.
    """
    from .overlap import fundamental_matrix

    n_cams = rig.n_cameras
    if pair_order is None:
        pair_order = list(combinations(range(n_cams), 2))

    owner: dict = {}
    groups: list = []
    for (i, j) in pair_order:
        feats_i, feats_j = cameras[i], cameras[j]
        if len(feats_i) == 0 or len(feats_j) == 0:
            continue
        cand_start, cand_flat = omap.csr(i, j)
        F = fundamental_matrix(rig, i, j)
        best_idx, _ = kernels.match_pair_grid(
            feats_i.cells,
            feats_i.descriptors,
            feats_i.pixels,
            feats_j.cell_order,
            feats_j.cell_start,
            feats_j.descriptors,
            feats_j.pixels,
            cand_start,
            cand_flat,
            F,
            params.max_hamming,
            params.ratio,
            params.epipolar_gate_px,
        )
        for k in range(len(feats_i)):
            m = int(best_idx[k])
            if m < 0:
                continue
            a = (i, k)
            b = (j, m)
            ga = owner.get(a)
            gb = owner.get(b)
            if ga is None and gb is None:
                owner[a] = owner[b] = len(groups)
                groups.append({i: k, j: m})
            elif ga is not None and gb is None:
                if j not in groups[ga]:
                    groups[ga][j] = m
                    owner[b] = ga
            elif gb is not None and ga is None:
                if i not in groups[gb]:
                    groups[gb][i] = k
                    owner[a] = gb
            # both grouped: same group is a no-op, distinct groups are discarded

    multiview, dissolved = _triangulate_groups(groups, cameras, rig, params)

    grouped = set()
    for mv in multiview:
        grouped.update(mv.members)
    mono = [
        MonoFeature(c, k)
        for c in range(n_cams)
        for k in range(len(cameras[c]))
        if (c, k) not in grouped
    ]
    return multiview, mono


def _triangulate_groups(groups, cameras, rig, params):
    """Triangulate match groups; return surviving MultiViewFeatures."""
    live = [sorted(g.items()) for g in groups if len(g) >= 2]
    if not live:
        return [], 0

    rays_dir = []
    rays_foot = []
    starts = [0]
    for members in live:
        for cam_idx, kp_idx in members:
            ray = pixel_to_plucker(
                cameras[cam_idx].pixels[kp_idx],
                rig.intrinsics(cam_idx),
                rig.extrinsic(cam_idx),
            )
            rays_dir.append(ray.direction)
            rays_foot.append(ray.closest_point_to_origin)
        starts.append(len(rays_dir))
    dirs = np.array(rays_dir)
    feet = np.array(rays_foot)
    group_start = np.array(starts, dtype=np.int64)
    points, ok = kernels.triangulate_midpoints(dirs, feet, group_start)

    multiview = []
    dissolved = 0
    for g, members in enumerate(live):
        lo, hi = group_start[g], group_start[g + 1]
        if not ok[g] or not _pairwise_parallax_ok(dirs[lo:hi], params.tri_min_parallax_deg):
            dissolved += 1
            continue
        point = points[g]
        good = True
        for cam_idx, kp_idx in members:
            cam = rig.cameras[cam_idx]
            R_bc = cam.body_T_cam.rotation
            p_cam = R_bc.T @ (point - cam.body_T_cam.translation)
            if p_cam[2] <= 1e-6:
                good = False
                break
            uv = np.array(
                [
                    cam.K.fx * p_cam[0] / p_cam[2] + cam.K.cx,
                    cam.K.fy * p_cam[1] / p_cam[2] + cam.K.cy,
                ]
            )
            if np.linalg.norm(uv - cameras[cam_idx].pixels[kp_idx]) > params.tri_max_reproj_px:
                good = False
                break
        if not good:
            dissolved += 1
            continue
        member_desc = np.array(
            [cameras[c].descriptors[k] for c, k in members], dtype=np.uint64
        )
        multiview.append(
            MultiViewFeature(
                members=tuple(members),
                point_body=point,
                descriptor=desc.majority_descriptor(member_desc),
            )
        )
    return multiview, dissolved


def build_frame(
    frame_id: int,
    timestamp: float,
    inputs: list,
    rig: RigCalibration,
    omap: OverlapMap,
    params: MatchParams = MatchParams(),
) -> MultiCameraFrame:
    """Detect + intra-match in one step: the pipeline's feature stage."""
    cameras = detect(inputs, rig, omap.grid_rows, omap.grid_cols)
    if rig.n_cameras >= 2:
        multiview, mono = intra_match(cameras, omap, rig, params)
    else:
        multiview = []
        mono = [MonoFeature(0, k) for k in range(len(cameras[0]))]
    return MultiCameraFrame(frame_id, timestamp, cameras, multiview, mono)


def body_ray(frame: MultiCameraFrame, rig: RigCalibration, camera_index: int, keypoint_index: int) -> PluckerRay:
    """Pluecker ray of one keypoint in the rig body frame."""
    return pixel_to_plucker(
        frame.cameras[camera_index].pixels[keypoint_index],
        rig.intrinsics(camera_index),
        rig.extrinsic(camera_index),
    )


TRACK_HEADER = ["frame_id", "camera_id", "keypoint_id", "x", "y", "octave", "descriptor_hex"]


def write_tracks(path: str | Path, rows) -> None:
    """Write feature track rows: (frame_id, camera_id, keypoint_id, x, y, octave, desc)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACK_HEADER)
        for frame_id, camera_id, keypoint_id, x, y, octave, descriptor in rows:
            writer.writerow(
                [frame_id, camera_id, keypoint_id, f"{x:.6f}", f"{y:.6f}", octave, desc.to_hex(descriptor)]
            )


def read_tracks(path: str | Path, n_cameras: int) -> dict:
    """Parse a track CSV into {frame_id: [DetectedFeatures per camera]}.

    Accepts rows with or without the octave column (missing octave reads
    as 0).
    """
    buckets: dict = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or row[0] == "frame_id":
                continue
            if len(row) == 7:
                frame_id, camera_id, keypoint_id, x, y, octave, hexd = row
            elif len(row) == 6:
                frame_id, camera_id, keypoint_id, x, y, hexd = row
                octave = "0"
            else:
                raise ValueError(f"{path}: bad track row {row}")
            cam = int(camera_id)
            if not (0 <= cam < n_cameras):
                raise ValueError(f"{path}: camera id {cam} out of range")
            entry = buckets.setdefault(int(frame_id), [[] for _ in range(n_cameras)])
            entry[cam].append(
                (int(keypoint_id), float(x), float(y), int(octave), desc.from_hex(hexd))
            )

    frames = {}
    for frame_id, cams in sorted(buckets.items()):
        per_cam = []
        for rows_c in cams:
            if not rows_c:
                per_cam.append(DetectedFeatures.empty())
                continue
            rows_c.sort(key=lambda r: r[0])
            ids = np.array([r[0] for r in rows_c], dtype=np.int64)
            px = np.array([[r[1], r[2]] for r in rows_c])
            octv = np.array([r[3] for r in rows_c], dtype=np.int64)
            descs = np.array([r[4] for r in rows_c], dtype=np.uint64)
            per_cam.append(DetectedFeatures(px, octv, descs, ids))
        frames[frame_id] = per_cam
    return frames
