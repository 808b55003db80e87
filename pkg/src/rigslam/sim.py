"""Synthetic rig / scene / trajectory generator with ground-truth labels.

Acts as the oracle for the whole pipeline: every rendered keypoint carries
the id of the landmark it observes (or -1 for injected outliers), so
matching precision, pose error and map error are exactly computable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import descriptors as desc
from . import kernels
from .calibration import CameraModel, RigCalibration
from .features import DetectedFeatures, FrameInput
from .geometry import Intrinsics, Pose

DEFAULT_WIDTH = 720
DEFAULT_HEIGHT = 540
DEFAULT_FOV_DEG = 57.0
DEFAULT_FPS = 20.0

RIG_KINDS = ("ov_linear", "nov_divergent", "mono")
TRAJECTORY_SHAPES = ("plus", "square", "circle", "straight")


def _yaw_matrix(psi: float) -> np.ndarray:
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _default_intrinsics(fov_deg: float, width: int, height: int) -> Intrinsics:
    f = (width / 2.0) / np.tan(np.radians(fov_deg) / 2.0)
    return Intrinsics(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0, width=width, height=height)


def make_rig(
    kind: str,
    n_cameras: int,
    baseline: float = 0.165,
    fov_deg: float = DEFAULT_FOV_DEG,
    width: int = DEFAULT_WIDTH,
    height: int = DEFAULT_HEIGHT,
) -> RigCalibration:
    """Canonical synthetic rigs.

    ov_linear: collinear forward-facing cameras spaced by the baseline.
    nov_divergent: cameras on a ring looking outward, yaws {0, +90, -90}
    for three cameras, else spread in 360/n steps. mono: one camera.
    """
    if n_cameras < 1:
        raise ValueError("n_cameras must be >= 1")
    if kind not in RIG_KINDS:
        raise ValueError(f"unknown rig kind {kind!r} (choose from {RIG_KINDS})")
    K = _default_intrinsics(fov_deg, width, height)

    if kind == "mono" or n_cameras == 1:
        return RigCalibration((CameraModel("cam0", K, Pose.identity()),), 0)

    if kind == "ov_linear":
        cams = tuple(
            CameraModel(f"cam{i}", K, Pose.from_rt(np.eye(3), [baseline * i, 0.0, 0.0]))
            for i in range(n_cameras)
        )
        return RigCalibration(cams, 0)

    if n_cameras == 2:
        yaws = [0.0, 180.0]
    elif n_cameras == 3:
        yaws = [0.0, 90.0, -90.0]
    else:
        yaws = [i * 360.0 / n_cameras for i in range(n_cameras)]
    radius = max(baseline, 1e-3)
    cams = []
    for i, yaw in enumerate(yaws):
        a = np.radians(yaw)
        t = radius * np.array([np.sin(a), 0.0, np.cos(a) - 1.0])
        cams.append(CameraModel(f"cam{i}", K, Pose.from_rt(_yaw_matrix(a), t)))
    return RigCalibration(tuple(cams), 0)


# ---------------------------------------------------------------------------
# trajectories (x-z ground plane, heading psi with forward = (sin psi, cos psi))


@dataclass(frozen=True)
class _Piece:
    length: float
    x0: float
    z0: float
    psi0: float
    curvature: float  # 0 for straights, signed 1/r for arcs

    def at(self, s: float) -> tuple[float, float, float]:
        k = self.curvature
        if k == 0.0:
            return (
                self.x0 + s * np.sin(self.psi0),
                self.z0 + s * np.cos(self.psi0),
                self.psi0,
            )
        psi = self.psi0 + k * s
        x = self.x0 + (np.cos(self.psi0) - np.cos(psi)) / k
        z = self.z0 + (np.sin(psi) - np.sin(self.psi0)) / k
        return x, z, psi


def _wrap_angle(a: float) -> float:
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def _rounded_polygon_pieces(waypoints: np.ndarray, size: float, corner_radius: float) -> list:
    """Closed polygon path with arc-rounded corners and total length == size."""
    n = waypoints.shape[0]
    edges = [waypoints[(k + 1) % n] - waypoints[k] for k in range(n)]
    edge_len = np.array([np.linalg.norm(e) for e in edges])
    headings = [np.arctan2(e[0], e[1]) for e in edges]
    turns = np.array(
        [_wrap_angle(headings[(k + 1) % n] - headings[k]) for k in range(n)]
    )  # turn at the corner ENDING edge k
    perimeter = float(edge_len.sum())

    r = corner_radius
    for _ in range(8):
        tangents = r * np.tan(np.abs(turns) / 2.0)
        correction = float(np.sum(2.0 * tangents - r * np.abs(turns)))
        scale = (size + correction) / perimeter
        ok = True
        for k in range(n):
            t_start = tangents[k - 1]  # corner at the start of edge k is corner k-1's end
            if scale * edge_len[k] - t_start - tangents[k] < 0.05 * scale * edge_len[k]:
                ok = False
                break
        if ok:
            break
        r *= 0.5
    tangents = r * np.tan(np.abs(turns) / 2.0)
    scale = (size + float(np.sum(2.0 * tangents - r * np.abs(turns)))) / perimeter

    pts = waypoints * scale
    pieces = []
    x, z = pts[0] + (edges[0] / edge_len[0]) * tangents[-1]
    for k in range(n):
        psi = headings[k]
        straight = scale * edge_len[k] - tangents[k - 1] - tangents[k]
        pieces.append(_Piece(straight, x, z, psi, 0.0))
        x, z, _ = pieces[-1].at(straight)
        if abs(turns[k]) > 1e-12 and r > 0:
            arc_len = r * abs(turns[k])
            curv = np.sign(turns[k]) / r
            pieces.append(_Piece(arc_len, x, z, psi, curv))
            x, z, _ = pieces[-1].at(arc_len)
    return pieces


_SQUARE_WAYPOINTS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
# Greek-cross outline: 12 unit segments, 8 convex and 4 concave right angles
_PLUS_WAYPOINTS = np.array(
    [
        [1.0, 0.0], [2.0, 0.0], [2.0, 1.0], [3.0, 1.0], [3.0, 2.0], [2.0, 2.0],
        [2.0, 3.0], [1.0, 3.0], [1.0, 2.0], [0.0, 2.0], [0.0, 1.0], [1.0, 1.0],
    ]
)


def make_trajectory(
    shape: str,
    size: float,
    n_frames: int,
    fps: float = DEFAULT_FPS,
    corner_radius: float = 0.3,
) -> list:
    """Planar trajectory with heading tangent to the path.

    size is the total path length in meters (perimeter for the closed
    shapes, circumference for the circle); closed shapes end exactly at
    their start pose. Returns [(timestamp, world_T_body), ...].
    """
    if n_frames < 2:
        raise ValueError("n_frames must be >= 2")
    if shape not in TRAJECTORY_SHAPES:
        raise ValueError(f"unknown shape {shape!r} (choose from {TRAJECTORY_SHAPES})")

    if shape == "straight":
        pieces = [_Piece(size, 0.0, 0.0, 0.0, 0.0)]
    elif shape == "circle":
        radius = size / (2.0 * np.pi)
        pieces = [_Piece(size, 0.0, 0.0, 0.0, 1.0 / radius)]
    elif shape == "square":
        pieces = _rounded_polygon_pieces(_SQUARE_WAYPOINTS, size, corner_radius)
    else:
        pieces = _rounded_polygon_pieces(_PLUS_WAYPOINTS, size, corner_radius)

    lengths = np.array([p.length for p in pieces])
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    total = cum[-1]

    x0, z0, _ = pieces[0].at(0.0)
    poses = []
    for k in range(n_frames):
        s = total * k / (n_frames - 1)
        idx = min(int(np.searchsorted(cum, s, side="right")) - 1, len(pieces) - 1)
        x, z, psi = pieces[idx].at(s - cum[idx])
        pose = Pose.from_rt(_yaw_matrix(psi), [x - x0, 0.0, z - z0])
        poses.append((k / fps, pose))
    return poses


# ---------------------------------------------------------------------------
# world + rendering


@dataclass(frozen=True)
class OccluderSpec:
    """Moving box occluder in one camera's image over a frame interval.

    Centers are image-fraction coordinates, linearly interpolated from
    frame_start to frame_end (exclusive). Landmarks projecting inside the
    box are dropped; n_outliers coherent dynamic keypoints (persistent
    random descriptors) are emitted inside the box instead.
    """

    camera_index: int
    frame_start: int
    frame_end: int
    center_start: tuple
    center_end: tuple
    width_frac: float
    height_frac: float
    n_outliers: int = 0

    def box(self, frame_idx: int, width: float, height: float):
        if not (self.frame_start <= frame_idx < self.frame_end):
            return None
        span = max(1, self.frame_end - 1 - self.frame_start)
        u = (frame_idx - self.frame_start) / span
        cx = ((1 - u) * self.center_start[0] + u * self.center_end[0]) * width
        cy = ((1 - u) * self.center_start[1] + u * self.center_end[1]) * height
        w = self.width_frac * width
        h = self.height_frac * height
        return (cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)


@dataclass
class SyntheticWorld:
    rig: RigCalibration
    trajectory: list  # [(timestamp, world_T_body), ...]
    landmarks: np.ndarray  # (m, 3)
    landmark_descriptors: np.ndarray  # (m, 4)
    seed: int
    noise_px: float = 0.0
    descriptor_flips: int = 8
    outlier_rate: float = 0.0
    min_depth: float = 0.3
    max_depth: float = 18.0
    occluders: list = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return len(self.trajectory)

    @property
    def n_landmarks(self) -> int:
        return self.landmarks.shape[0]


def _sample_landmarks(trajectory, n: int, rng: np.random.Generator, margin: float, y_range):
    pos = np.array([p.translation for _, p in trajectory])
    lo = pos.min(axis=0) - np.array([margin, 0.0, margin])
    hi = pos.max(axis=0) + np.array([margin, 0.0, margin])
    pts = np.empty((n, 3))
    pts[:, 0] = rng.uniform(lo[0], hi[0], size=n)
    pts[:, 1] = rng.uniform(y_range[0], y_range[1], size=n)
    pts[:, 2] = rng.uniform(lo[2], hi[2], size=n)
    return pts


def make_world(
    rig: RigCalibration,
    trajectory: list,
    n_landmarks: int = 3000,
    seed: int = 0,
    noise_px: float = 0.0,
    descriptor_flips: int = 8,
    outlier_rate: float = 0.0,
    occluders: list | None = None,
    margin: float = 7.0,
    y_range: tuple = (-2.0, 2.0),
    target_per_camera: float | None = None,
) -> SyntheticWorld:
    """Generate a world; optionally rescale landmark count so the average
    per-camera visible count over probe frames matches target_per_camera."""
    rng = np.random.default_rng([seed, 0x51AE])
    landmarks = _sample_landmarks(trajectory, n_landmarks, rng, margin, y_range)
    world = SyntheticWorld(
        rig=rig,
        trajectory=trajectory,
        landmarks=landmarks,
        landmark_descriptors=desc.random_descriptors(n_landmarks, rng),
        seed=seed,
        noise_px=noise_px,
        descriptor_flips=descriptor_flips,
        outlier_rate=outlier_rate,
        occluders=list(occluders or []),
    )
    if target_per_camera is not None:
        probes = np.unique(np.linspace(0, len(trajectory) - 1, 8).astype(int))
        counts = []
        for idx in probes:
            frame = render_frame(world, int(idx))
            counts.extend(len(f.pixels) for f in frame.features)
        mean = max(float(np.mean(counts)), 1.0)
        n_new = max(200, int(round(n_landmarks * target_per_camera / mean)))
        rng2 = np.random.default_rng([seed, 0x51AE])
        landmarks = _sample_landmarks(trajectory, n_new, rng2, margin, y_range)
        world = replace(
            world,
            landmarks=landmarks,
            landmark_descriptors=desc.random_descriptors(n_new, rng2),
        )
    return world


def render_frame(world: SyntheticWorld, frame_idx: int) -> FrameInput:
    """Project visible landmarks into every camera with the configured
    noise, descriptor corruption, occluders and outliers."""
    timestamp, world_T_body = world.trajectory[frame_idx]
    rng = np.random.default_rng([world.seed, 0xF0A3, frame_idx])
    features = []
    labels = []
    for cam_idx, cam in enumerate(world.rig.cameras):
        K = cam.K
        world_T_cam = world_T_body.compose(cam.body_T_cam)
        R_cw = world_T_cam.rotation.T
        t_cw = -R_cw @ world_T_cam.translation
        uv, depth = kernels.transform_project(
            R_cw, t_cw, world.landmarks, K.fx, K.fy, K.cx, K.cy
        )
        vis = (depth > world.min_depth) & (depth < world.max_depth) & K.contains(uv)

        boxes = [
            o.box(frame_idx, K.width, K.height)
            for o in world.occluders
            if o.camera_index == cam_idx
        ]
        for box in boxes:
            if box is None:
                continue
            x0, y0, x1, y1 = box
            inside = (uv[:, 0] >= x0) & (uv[:, 0] <= x1) & (uv[:, 1] >= y0) & (uv[:, 1] <= y1)
            vis &= ~inside

        idx = np.flatnonzero(vis)
        px = uv[idx]
        if world.noise_px > 0 and idx.size:
            px = px + rng.normal(0.0, world.noise_px, size=px.shape)
            keep = K.contains(px)
            idx, px = idx[keep], px[keep]
        descs = np.empty((idx.size, 4), dtype=np.uint64)
        for row, lm in enumerate(idx):
            descs[row] = desc.flip_bits(
                world.landmark_descriptors[lm], world.descriptor_flips, rng
            )
        lab = idx.astype(np.int64)

        extra_px, extra_desc = _occluder_keypoints(world, frame_idx, cam_idx, K)
        if world.outlier_rate > 0 and idx.size:
            n_out = int(round(world.outlier_rate * idx.size))
            if n_out:
                rand_px = np.column_stack(
                    [
                        rng.uniform(0, K.width - 1e-6, size=n_out),
                        rng.uniform(0, K.height - 1e-6, size=n_out),
                    ]
                )
                extra_px.append(rand_px)
                extra_desc.append(desc.random_descriptors(n_out, rng))

        if extra_px:
            px = np.vstack([px] + extra_px) if px.size else np.vstack(extra_px)
            descs = np.vstack([descs] + extra_desc)
            lab = np.concatenate([lab, np.full(sum(len(e) for e in extra_px), -1, dtype=np.int64)])

        features.append(
            DetectedFeatures(px, np.zeros(len(px), dtype=np.int64), descs)
        )
        labels.append(lab)
    return FrameInput(frame_idx, timestamp, features, labels)


def _occluder_keypoints(world, frame_idx, cam_idx, K):
    """Coherently moving outlier keypoints emitted by active occluders."""
    extra_px = []
    extra_desc = []
    for occ_idx, occ in enumerate(world.occluders):
        if occ.camera_index != cam_idx or occ.n_outliers <= 0:
            continue
        box = occ.box(frame_idx, K.width, K.height)
        if box is None:
            continue
        occ_rng = np.random.default_rng([world.seed, 0xD1A, occ_idx])
        offsets = occ_rng.uniform(0.05, 0.95, size=(occ.n_outliers, 2))
        descs = desc.random_descriptors(occ.n_outliers, occ_rng)
        x0, y0, x1, y1 = box
        px = np.column_stack(
            [x0 + offsets[:, 0] * (x1 - x0), y0 + offsets[:, 1] * (y1 - y0)]
        )
        keep = K.contains(px)
        if keep.any():
            extra_px.append(px[keep])
            extra_desc.append(descs[keep])
    return extra_px, extra_desc


class SimSource:
    """Frame provider backed by a SyntheticWorld (the oracle detector)."""

    def __init__(self, world: SyntheticWorld):
        self.world = world

    def __len__(self) -> int:
        return self.world.n_frames

    def __iter__(self):
        for idx in range(self.world.n_frames):
            yield render_frame(self.world, idx)


def export_dataset(world: SyntheticWorld, out_dir) -> dict:
    """Write rig JSON, feature track CSV and ground-truth TUM trajectory."""
    from pathlib import Path

    from .calibration import save_rig
    from .evaluate import write_tum
    from .features import write_tracks

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rig_path = out / "rig.json"
    tracks_path = out / "tracks.csv"
    gt_path = out / "groundtruth.txt"

    save_rig(world.rig, rig_path)

    def rows():
        for frame in SimSource(world):
            for cam_idx, feats in enumerate(frame.features):
                for k in range(len(feats.pixels)):
                    yield (
                        frame.frame_id,
                        cam_idx,
                        k,
                        feats.pixels[k, 0],
                        feats.pixels[k, 1],
                        int(feats.octaves[k]),
                        feats.descriptors[k],
                    )

    write_tracks(tracks_path, rows())
    write_tum(gt_path, world.trajectory)
    return {"rig": rig_path, "tracks": tracks_path, "groundtruth": gt_path}
