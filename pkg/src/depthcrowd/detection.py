"""Per-frame pedestrian detection on world-frame point clouds.

Pipeline: background subtraction, height cutoff, complete-linkage
clustering of a random subsample, reassignment of all remaining points to
the nearest cluster, and selection of a height-percentile representative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .core import Point3


@dataclass(frozen=True)
class BackgroundModel:
    """Static scene structure as axis-aligned boxes, shape (K, 6).

    Each row is ``xmin ymin zmin xmax ymax zmax`` in world meters.
    """

    boxes: np.ndarray = None

    def __post_init__(self):
        b = np.zeros((0, 6)) if self.boxes is None else np.asarray(self.boxes, dtype=float)
        b = b.reshape(-1, 6)
        if not np.all(np.isfinite(b)):
            raise ValueError("background boxes must be finite")
        b = b.copy()
        b.setflags(write=False)
        object.__setattr__(self, "boxes", b)

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        inside = np.zeros(len(p), dtype=bool)
        for box in self.boxes:
            inside |= np.all((p >= box[:3]) & (p <= box[3:]), axis=1)
        return inside


def read_background(path) -> BackgroundModel:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        vals = [float(v) for v in line.split()]
        if len(vals) != 6:
            raise ValueError(f"{path}: background box needs 6 values: {line!r}")
        rows.append(vals)
    return BackgroundModel(np.array(rows).reshape(-1, 6))


def write_background(path, bg: BackgroundModel) -> None:
    lines = ["# xmin ymin zmin xmax ymax zmax"]
    lines += [" ".join(f"{v:.6f}" for v in box) for box in bg.boxes]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class DetectionConfig:
    cutoff_low: float = 1.5
    cutoff_high: float = 2.1
    sample_size: int = 500
    linkage_threshold: float = 0.6
    min_cluster_points: int = 15
    max_center_distance: float = 0.45
    percentile: float = 95.0

    def __post_init__(self):
        if not 0 < self.cutoff_low < self.cutoff_high:
            raise ValueError("need 0 < cutoff_low < cutoff_high")
        if self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")
        if self.linkage_threshold <= 0:
            raise ValueError("linkage_threshold must be positive")


@dataclass(frozen=True)
class Detection:
    position: Point3
    t: float
    point_count: int
    sensor_id: int = 0


def subtract_background(points, bg: BackgroundModel) -> np.ndarray:
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    return p[~bg.contains(p)]


def height_cutoff(points, cfg: DetectionConfig) -> np.ndarray:
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    keep = (p[:, 2] >= cfg.cutoff_low) & (p[:, 2] <= cfg.cutoff_high)
    return p[keep]


def sample_indices(n: int, size: int, seed) -> np.ndarray:
    """Sorted uniform sample of ``min(size, n)`` indices out of ``n``."""
    if n <= size:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=size, replace=False))


def complete_linkage_cluster(points, cfg: DetectionConfig, seed=0) -> list[np.ndarray]:
    """Complete-linkage clusters over a seeded subsample of ``points``.

    Returns a list of index arrays into ``points`` (sampled points only),
    ordered by their smallest member index. Groups are the leaves under
    dendrogram nodes whose merge height stays below ``linkage_threshold``.
    """
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(p) == 0:
        raise ValueError("complete_linkage_cluster needs at least one point")
    sample = sample_indices(len(p), cfg.sample_size, seed)
    if len(sample) == 1:
        return [sample]
    Z = linkage(p[sample], method="complete", metric="euclidean")
    # fcluster keeps merges with height <= t; nudge t down so "less than" holds.
    t = np.nextafter(cfg.linkage_threshold, -np.inf)
    labels = fcluster(Z, t=t, criterion="distance")
    groups: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(int(sample[i]))
    return sorted((np.array(g) for g in groups.values()), key=lambda g: g[0])


def _horizontal_centroids(points: np.ndarray, clusters: Sequence[np.ndarray]) -> np.ndarray:
    return np.array([points[c, :2].mean(axis=0) for c in clusters]).reshape(-1, 2)


def assign_and_cleanup(all_points, clusters: Sequence[np.ndarray],
                       cfg: DetectionConfig) -> list[np.ndarray]:
    """Attach every point to its nearest cluster centroid or drop it.

    Proximity uses horizontal (x, y) distance to each cluster's horizontal
    centroid. Clusters left with fewer than ``min_cluster_points`` members
    are removed.
    """
    p = np.asarray(all_points, dtype=float).reshape(-1, 3)
    if not clusters or len(p) == 0:
        return []
    cent = _horizontal_centroids(p, clusters)
    d2 = ((p[:, None, :2] - cent[None, :, :]) ** 2).sum(axis=2)
    nearest = np.argmin(d2, axis=1)
    close = d2[np.arange(len(p)), nearest] <= cfg.max_center_distance ** 2
    out = []
    for k in range(len(clusters)):
        members = np.flatnonzero(close & (nearest == k))
        if len(members) >= cfg.min_cluster_points:
            out.append(members)
    return out


def nearest_rank_index(n: int, percentile: float) -> int:
    """Zero-based index of the nearest-rank percentile in a sorted sample."""
    return max(int(math.ceil(percentile / 100.0 * n)), 1) - 1


def cluster_representative(cluster_points, t: float = 0.0, sensor_id: int = 0,
                           percentile: float = 95.0) -> Detection:
    """Detection at the member whose height is the nearest-rank percentile."""
    p = np.asarray(cluster_points, dtype=float).reshape(-1, 3)
    if len(p) == 0:
        raise ValueError("cluster is empty")
    order = np.argsort(p[:, 2], kind="stable")
    chosen = p[order[nearest_rank_index(len(p), percentile)]]
    return Detection(Point3(*map(float, chosen)), float(t), len(p), sensor_id)


def canonical_order(points: np.ndarray) -> np.ndarray:
    """Lexicographic (x, y, z) order; makes sampling independent of input order."""
    return np.lexsort((points[:, 2], points[:, 1], points[:, 0]))


def suppress_close(dets: list[Detection], min_separation: float) -> list[Detection]:
    """Drop detections horizontally closer than ``min_separation`` to a larger one."""
    kept: list[Detection] = []
    for d in sorted(dets, key=lambda d: (-d.point_count, d.position.x, d.position.y)):
        if all(math.hypot(d.position.x - k.position.x, d.position.y - k.position.y)
               >= min_separation for k in kept):
            kept.append(d)
    return kept


def detect_frame(points, bg: BackgroundModel, cfg: DetectionConfig, seed=0,
                 t: float = 0.0, sensor_id: int = 0) -> list[Detection]:
    """Detect pedestrians in one world-frame point cloud.

    Deterministic for a given seed and invariant to the order of ``points``.
    """
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    p = height_cutoff(subtract_background(p, bg), cfg)
    if len(p) == 0:
        return []
    p = p[canonical_order(p)]
    clusters = complete_linkage_cluster(p, cfg, seed)
    groups = assign_and_cleanup(p, clusters, cfg)
    dets = [cluster_representative(p[g], t, sensor_id, cfg.percentile) for g in groups]
    dets = suppress_close(dets, cfg.linkage_threshold / 2.0)
    return sorted(dets, key=lambda d: (d.position.x, d.position.y))


def drop_truncated(dets: list[Detection], points: np.ndarray, on_border: np.ndarray,
                   cfg: DetectionConfig, radius: float = 0.3) -> list[Detection]:
    """Remove detections whose body reaches the image border.

    A person cut by the frame edge yields a representative biased toward
    the visible part. ``on_border`` flags the world ``points`` that come
    from border pixels; a detection is dropped when any in-band border
    point lies within ``radius`` of it horizontally.
    """
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    band = (p[:, 2] >= cfg.cutoff_low) & (p[:, 2] <= cfg.cutoff_high) & np.asarray(on_border)
    edge = p[band, :2]
    if edge.size == 0:
        return list(dets)
    out = []
    for d in dets:
        if np.min(np.hypot(edge[:, 0] - d.position.x, edge[:, 1] - d.position.y)) > radius:
            out.append(d)
    return out


def detect_depth_frame(frame, intrinsics, pose, bg: BackgroundModel, cfg: DetectionConfig,
                       seed=0, border_px: int = 1) -> list[Detection]:
    """Back-project a depth frame into the world and detect pedestrians in it.

    With ``border_px > 0`` detections touching the outer ``border_px``
    pixel rows or columns are discarded (see :func:`drop_truncated`).
    """
    from .geometry import back_project_array

    cam, idx = back_project_array(frame, intrinsics, return_index=True)
    pts = pose.apply(cam)
    dets = detect_frame(pts, bg, cfg, seed, frame.t, frame.sensor_id)
    if border_px > 0 and dets:
        v, u = np.divmod(idx, intrinsics.width)
        on_border = ((u < border_px) | (u >= intrinsics.width - border_px)
                     | (v < border_px) | (v >= intrinsics.height - border_px))
        dets = drop_truncated(dets, pts, on_border, cfg)
    return dets
