"""Multi-camera rig model and its JSON serialization.

Extrinsics follow the body_T_cam convention (camera-to-body transform);
the rig body frame coincides with one designated component camera.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CalibrationFormatError
from .geometry import Intrinsics, Pose

RIG_FORMAT_VERSION = 1
_IDENTITY_TOL = 1e-9


@dataclass(frozen=True)
class CameraModel:
    camera_id: str
    K: Intrinsics
    body_T_cam: Pose


@dataclass(frozen=True)
class RigCalibration:
    """Ordered component cameras; cameras[body_camera_index] is the body frame."""

    cameras: tuple[CameraModel, ...]
    body_camera_index: int

    def __post_init__(self):
        if len(self.cameras) < 1:
            raise CalibrationFormatError("rig needs at least one camera")
        ids = [c.camera_id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise CalibrationFormatError(f"duplicate camera ids in {ids}")
        body = self.cameras[self.body_camera_index]
        if not body.body_T_cam.is_identity(_IDENTITY_TOL):
            raise CalibrationFormatError("body camera extrinsic is not identity")

    @property
    def n_cameras(self) -> int:
        return len(self.cameras)

    def intrinsics(self, index: int) -> Intrinsics:
        return self.cameras[index].K

    def extrinsic(self, index: int) -> Pose:
        return self.cameras[index].body_T_cam

    def relative_pose(self, i: int, j: int) -> Pose:
        """j_T_i: transform taking camera-i coordinates into camera j."""
        return self.cameras[j].body_T_cam.inverse().compose(self.cameras[i].body_T_cam)


def make_rig(cameras: list[CameraModel]) -> RigCalibration:
    """Build a rig, re-basing extrinsics onto camera 0 if no camera is identity."""
    body_index = None
    for i, cam in enumerate(cameras):
        if cam.body_T_cam.is_identity(_IDENTITY_TOL):
            body_index = i
            break
    if body_index is None:
        ref_inv = cameras[0].body_T_cam.inverse()
        cameras = [
            CameraModel(c.camera_id, c.K, ref_inv.compose(c.body_T_cam)) for c in cameras
        ]
        # snap the reference camera to exact identity
        cameras[0] = CameraModel(cameras[0].camera_id, cameras[0].K, Pose.identity())
        body_index = 0
    return RigCalibration(tuple(cameras), body_index)


def _camera_to_dict(cam: CameraModel) -> dict:
    return {
        "id": cam.camera_id,
        "fx": cam.K.fx,
        "fy": cam.K.fy,
        "cx": cam.K.cx,
        "cy": cam.K.cy,
        "width": cam.K.width,
        "height": cam.K.height,
        "q_wxyz": [float(v) for v in cam.body_T_cam.quat],
        "t_xyz": [float(v) for v in cam.body_T_cam.translation],
    }


def _camera_from_dict(entry: dict) -> CameraModel:
    try:
        K = Intrinsics(
            fx=float(entry["fx"]),
            fy=float(entry["fy"]),
            cx=float(entry["cx"]),
            cy=float(entry["cy"]),
            width=int(entry["width"]),
            height=int(entry["height"]),
        )
        pose = Pose(np.array(entry["q_wxyz"], dtype=float), np.array(entry["t_xyz"], dtype=float))
        camera_id = str(entry["id"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CalibrationFormatError(f"bad camera entry: {exc}") from exc
    try:
        K.validate()
    except Exception as exc:
        raise CalibrationFormatError(f"camera {camera_id}: {exc}") from exc
    return CameraModel(camera_id, K, pose)


def save_rig(rig: RigCalibration, path: str | Path) -> None:
    doc = {
        "rig_format": RIG_FORMAT_VERSION,
        "extrinsic_convention": "body_T_cam",
        "body_camera_index": rig.body_camera_index,
        "cameras": [_camera_to_dict(c) for c in rig.cameras],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_rig(path: str | Path) -> RigCalibration:
    """Load a rig JSON, re-basing extrinsics if no camera frame matches the body."""
    try:
        doc = json.loads(Path(path).read_text())
    except OSError:
        raise
    except json.JSONDecodeError as exc:
        raise CalibrationFormatError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "cameras" not in doc:
        raise CalibrationFormatError(f"{path}: missing 'cameras' block")
    version = doc.get("rig_format")
    if version != RIG_FORMAT_VERSION:
        raise CalibrationFormatError(f"{path}: unsupported rig_format {version!r}")
    cameras = [_camera_from_dict(e) for e in doc["cameras"]]

    declared = doc.get("body_camera_index")
    if (
        isinstance(declared, int)
        and 0 <= declared < len(cameras)
        and cameras[declared].body_T_cam.is_identity(_IDENTITY_TOL)
    ):
        return RigCalibration(tuple(cameras), declared)
    return make_rig(cameras)
