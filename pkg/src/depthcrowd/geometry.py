"""Depth back-projection and rigid sensor-to-world calibration."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Point3

DPF_MAGIC = b"DPF1"
_DPF_HEADER = struct.Struct("<4sIdII")

# Depths at or below this are treated as invalid (sensor near limit).
MIN_VALID_DEPTH = 0.4


class RankError(ValueError):
    """Raised when point matches cannot determine a rigid transform."""


@dataclass(frozen=True)
class CameraIntrinsics:
    focal_length_px: float = 585.0
    width: int = 640
    height: int = 480
    depth_range_max: float = 4.0

    def __post_init__(self):
        if self.focal_length_px <= 0:
            raise ValueError("focal length must be positive")
        if self.depth_range_max <= 0:
            raise ValueError("depth_range_max must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")

    @property
    def cx(self) -> float:
        return self.width / 2.0

    @property
    def cy(self) -> float:
        return self.height / 2.0

    def scaled(self, factor: int) -> "CameraIntrinsics":
        """Intrinsics of the same lens binned down by an integer factor."""
        return CameraIntrinsics(self.focal_length_px / factor, self.width // factor,
                                self.height // factor, self.depth_range_max)


@dataclass(frozen=True)
class DepthFrame:
    sensor_id: int
    t: float
    depth: np.ndarray = field(repr=False)  # (height, width), meters, 0 = invalid

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1) > 1e-9:
            raise ValueError("rotation must be orthonormal with determinant +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation


@dataclass(frozen=True)
class PointMatch:
    world: Point3
    camera: Point3

    def __post_init__(self):
        if not (np.all(np.isfinite(self.world)) and np.all(np.isfinite(self.camera))):
            raise ValueError("point match coordinates must be finite")


def back_project_array(frame: DepthFrame, intrinsics: CameraIntrinsics,
                       return_index: bool = False):
    """Back-project valid pixels to camera coordinates as an (N, 3) array.

    Points come out in row-major pixel order. With ``return_index`` the flat
    pixel indices are returned as well.
    """
    depth = np.asarray(frame.depth)
    if depth.shape != (intrinsics.height, intrinsics.width):
        raise ValueError(f"frame is {depth.shape[1]}x{depth.shape[0]}, intrinsics "
                         f"expect {intrinsics.width}x{intrinsics.height}")
    flat = depth.reshape(-1)
    valid = (flat > MIN_VALID_DEPTH) & (flat <= intrinsics.depth_range_max)
    idx = np.flatnonzero(valid)
    z = flat[idx].astype(float)
    v, u = np.divmod(idx, intrinsics.width)
    f = intrinsics.focal_length_px
    pts = np.column_stack(((u - intrinsics.cx) * z / f, (v - intrinsics.cy) * z / f, z))
    if return_index:
        return pts, idx
    return pts


def back_project(frame: DepthFrame, intrinsics: CameraIntrinsics) -> list[Point3]:
    return [Point3(*map(float, p)) for p in back_project_array(frame, intrinsics)]


def apply_transform(tf: RigidTransform, p) -> Point3:
    return Point3(*map(float, tf.rotation @ np.asarray(p, dtype=float) + tf.translation))


def _match_arrays(matches: Sequence[PointMatch]) -> tuple[np.ndarray, np.ndarray]:
    world = np.array([tuple(m.world) for m in matches], dtype=float).reshape(-1, 3)
    cam = np.array([tuple(m.camera) for m in matches], dtype=float).reshape(-1, 3)
    return world, cam


def estimate_rigid_transform(matches: Sequence[PointMatch]) -> RigidTransform:
    """Least-squares rigid transform mapping camera points onto world points.

    Closed-form orthogonal Procrustes (Kabsch): SVD of the cross-covariance
    of the centred point sets, with a sign flip on the smallest singular
    direction when the unconstrained optimum would be a reflection.
    """
    if len(matches) < 3:
        raise RankError(f"need at least 3 point matches, got {len(matches)}")
    world, cam = _match_arrays(matches)
    cw, cc = world.mean(axis=0), cam.mean(axis=0)
    W, C = world - cw, cam - cc
    scale = max(np.abs(C).max(), np.abs(W).max(), 1e-300)
    sv_cam = np.linalg.svd(C, compute_uv=False)
    # Collinear (or coincident) camera points leave rotation about their line free.
    if sv_cam[1] <= 1e-9 * scale * np.sqrt(len(matches)):
        raise RankError("point matches are collinear or degenerate")
    H = C.T @ W
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    # Re-orthonormalise to remove rounding drift before validation.
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    t = cw - R @ cc
    return RigidTransform(R, t)


def calibration_rmse(tf: RigidTransform, matches: Sequence[PointMatch]) -> float:
    if not matches:
        raise ValueError("calibration_rmse needs at least one match")
    world, cam = _match_arrays(matches)
    res = world - tf.apply(cam)
    return float(np.sqrt(np.mean(np.sum(res * res, axis=1))))


def rotation_angle(R: np.ndarray) -> float:
    """Rotation angle (radians) of a 3x3 rotation matrix."""
    c = (np.trace(R) - 1.0) / 2.0
    s = np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    return float(np.arctan2(s, c))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def top_down_pose(x: float, y: float, height: float) -> RigidTransform:
    """Pose of a sensor looking straight down from ``(x, y, height)``.

    Image u runs along world +x, image v along world -y.
    """
    return RigidTransform(np.diag([1.0, -1.0, -1.0]), [x, y, height])


# -- file formats ------------------------------------------------------------

def write_depth_frame(path, frame: DepthFrame) -> None:
    depth = np.asarray(frame.depth, dtype="<f4")
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(_DPF_HEADER.pack(DPF_MAGIC, int(frame.sensor_id), float(frame.t), w, h))
        fh.write(np.ascontiguousarray(depth).tobytes())


def read_depth_frame(path) -> DepthFrame:
    data = Path(path).read_bytes()
    if len(data) < _DPF_HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, sensor_id, t, w, h = _DPF_HEADER.unpack_from(data)
    if magic != DPF_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    expected = _DPF_HEADER.size + 4 * w * h
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")
    depth = np.frombuffer(data, dtype="<f4", offset=_DPF_HEADER.size).reshape(h, w)
    return DepthFrame(sensor_id, t, depth.astype(np.float32))


def write_calibration(path, transforms: dict[int, RigidTransform],
                      header: Sequence[str] = ()) -> None:
    lines = [f"# {h}" for h in header]
    lines.append("# sensor_id r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz")
    for sid in sorted(transforms):
        tf = transforms[sid]
        vals = list(tf.rotation.reshape(-1)) + list(tf.translation)
        lines.append(" ".join([str(sid)] + [f"{v:.12g}" for v in vals]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_calibration(path) -> dict[int, RigidTransform]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 13:
            raise ValueError(f"{path}: calibration record needs 13 fields: {line!r}")
        vals = [float(v) for v in parts[1:]]
        R = np.array(vals[:9]).reshape(3, 3)
        # Text round-off: project back onto SO(3).
        u, _, vt = np.linalg.svd(R)
        out[int(parts[0])] = RigidTransform(u @ vt, vals[9:])
    return out


def read_point_matches(path) -> dict[int, list[PointMatch]]:
    """Read ``sensor_id xw yw zw xc yc zc`` records grouped by sensor."""
    out: dict[int, list[PointMatch]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 7:
            raise ValueError(f"{path}: point match record needs 7 fields: {line!r}")
        v = [float(p) for p in parts[1:]]
        out.setdefault(int(parts[0]), []).append(PointMatch(Point3(*v[:3]), Point3(*v[3:])))
    return out


def write_point_matches(path, matches: dict[int, Sequence[PointMatch]]) -> None:
    lines = ["# sensor_id xw yw zw xc yc zc"]
    for sid in sorted(matches):
        for m in matches[sid]:
            lines.append(" ".join([str(sid)] + [f"{v:.9f}" for v in (*m.world, *m.camera)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
