"""Shared domain types: points, trajectories and trajectory sets.

Trajectories are stored as numpy arrays (times and world positions) and
are immutable after construction.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

DEFAULT_FRAME_RATE = 30.0

TRAJECTORY_HEADER = ("trajectory_id", "t_seconds", "x_m", "y_m", "z_m")


class Point3(NamedTuple):
    x: float
    y: float
    z: float


class TrajectoryPoint(NamedTuple):
    t: float
    position: Point3


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


class Trajectory:
    """Time-ordered world positions of one pedestrian.

    Parameters
    ----------
    id : str
        Identifier assigned by the producer.
    t : array_like, shape (N,)
        Timestamps in seconds, strictly increasing and non-negative.
    xyz : array_like, shape (N, 3)
        World positions in meters.
    """

    __slots__ = ("id", "t", "xyz")

    def __init__(self, id: str, t, xyz):
        t = np.asarray(t, dtype=float).reshape(-1)
        xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
        if t.size == 0:
            raise ValueError("trajectory must contain at least one point")
        if xyz.shape[0] != t.size:
            raise ValueError(f"{t.size} timestamps but {xyz.shape[0]} positions")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(xyz))):
            raise ValueError("trajectory contains non-finite values")
        if np.any(t < 0):
            raise ValueError("timestamps must be non-negative")
        if np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "id", str(id))
        object.__setattr__(self, "t", _frozen(t))
        object.__setattr__(self, "xyz", _frozen(xyz))

    def __setattr__(self, name, value):
        raise AttributeError("Trajectory is immutable")

    @classmethod
    def from_points(cls, id: str, points: Iterable[TrajectoryPoint]) -> "Trajectory":
        pts = list(points)
        return cls(id, [p.t for p in pts], [tuple(p.position) for p in pts])

    def __len__(self) -> int:
        return self.t.size

    def __repr__(self) -> str:
        return (f"Trajectory(id={self.id!r}, n={len(self)}, "
                f"t=[{self.t[0]:.3f}, {self.t[-1]:.3f}])")

    @property
    def points(self) -> list[TrajectoryPoint]:
        return [TrajectoryPoint(float(t), Point3(*map(float, p)))
                for t, p in zip(self.t, self.xyz)]

    @property
    def xy(self) -> np.ndarray:
        return self.xyz[:, :2]

    @property
    def mean_height(self) -> float:
        return float(np.mean(self.xyz[:, 2]))

    @property
    def start_time(self) -> float:
        return float(self.t[0])

    @property
    def end_time(self) -> float:
        return float(self.t[-1])

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def with_id(self, new_id: str) -> "Trajectory":
        return Trajectory(new_id, self.t, self.xyz)

    def position_at(self, t) -> np.ndarray:
        """Piecewise-linear position at time(s) ``t`` (clamped to the ends)."""
        t = np.asarray(t, dtype=float)
        return np.stack([np.interp(t, self.t, self.xyz[:, k]) for k in range(3)], axis=-1)

    def equals(self, other: "Trajectory", atol: float = 0.0) -> bool:
        return (len(self) == len(other)
                and np.allclose(self.t, other.t, rtol=0, atol=atol)
                and np.allclose(self.xyz, other.xyz, rtol=0, atol=atol))


@dataclass(frozen=True)
class TrajectorySet:
    trajectories: tuple[Trajectory, ...] = ()
    frame_rate: float = DEFAULT_FRAME_RATE
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        if not self.frame_rate > 0:
            raise ValueError("frame_rate must be positive")
        ids = [tr.id for tr in self.trajectories]
        if len(set(ids)) != len(ids):
            raise ValueError("trajectory ids must be unique within a set")

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self) -> Iterator[Trajectory]:
        return iter(self.trajectories)

    def __getitem__(self, i):
        return self.trajectories[i]

    def by_id(self) -> dict[str, Trajectory]:
        return {tr.id: tr for tr in self.trajectories}

    @property
    def ids(self) -> list[str]:
        return [tr.id for tr in self.trajectories]


def resample(traj: Trajectory, rate: float) -> Trajectory:
    """Sample the piecewise-linear interpolant of ``traj`` at ``rate`` Hz.

    Samples start at the first timestamp and are spaced ``1/rate`` apart;
    the last timestamp is always included, even if it falls off-grid.
    """
    if len(traj) < 2:
        raise ValueError("resample needs a trajectory with at least 2 points")
    if not rate > 0:
        raise ValueError("rate must be positive")
    t0, t1 = traj.t[0], traj.t[-1]
    step = 1.0 / rate
    n = int(math.floor((t1 - t0) / step + 1e-9))
    grid = t0 + step * np.arange(n + 1)
    # Snap the final sample onto t1 when it sits within rounding distance.
    if t1 - grid[-1] <= 1e-9 * max(1.0, abs(t1)):
        grid[-1] = t1
    else:
        grid = np.append(grid, t1)
    xyz = traj.position_at(grid)
    xyz[0] = traj.xyz[0]
    xyz[-1] = traj.xyz[-1]
    # Exact input samples that land on the grid are copied through unchanged.
    idx = np.searchsorted(traj.t, grid)
    idx = np.clip(idx, 0, len(traj) - 1)
    hit = np.abs(traj.t[idx] - grid) <= 1e-12 * np.maximum(1.0, np.abs(grid))
    xyz[hit] = traj.xyz[idx[hit]]
    grid[hit] = traj.t[idx[hit]]
    return Trajectory(traj.id, grid, xyz)


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def write_trajectories(path, tset: TrajectorySet, extra_meta: Mapping[str, object] | None = None):
    """Write a trajectory set as comma-separated records.

    Metadata (frame rate, effective configuration) is written as leading
    ``# key = value`` comment lines, followed by the required header.
    """
    meta = {"frame_rate": repr(float(tset.frame_rate))}
    meta.update({k: str(v) for k, v in tset.metadata.items()})
    if extra_meta:
        meta.update({k: str(v) for k, v in extra_meta.items()})
    buf = io.StringIO()
    for k in sorted(meta):
        buf.write(f"# {k} = {meta[k]}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJECTORY_HEADER)
    for tr in tset:
        for t, (x, y, z) in zip(tr.t, tr.xyz):
            w.writerow((tr.id, _fmt(t), _fmt(x), _fmt(y), _fmt(z)))
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_trajectories(path) -> TrajectorySet:
    text = Path(path).read_text(encoding="utf-8")
    meta: dict[str, str] = {}
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            meta[key.strip()] = value.strip()
        elif line.strip():
            body.append(line)
    if not body:
        raise ValueError(f"{path}: missing header line")
    rows = list(csv.reader(body))
    header = tuple(h.strip() for h in rows[0])
    if header != TRAJECTORY_HEADER:
        raise ValueError(f"{path}: unexpected header {header}")
    grouped: dict[str, list[tuple[float, float, float, float]]] = {}
    for row in rows[1:]:
        if len(row) != 5:
            raise ValueError(f"{path}: malformed record {row}")
        grouped.setdefault(row[0], []).append(tuple(float(v) for v in row[1:]))
    trajs = []
    for tid, recs in grouped.items():
        arr = np.array(recs)
        trajs.append(Trajectory(tid, arr[:, 0], arr[:, 1:4]))
    rate = float(meta.pop("frame_rate", DEFAULT_FRAME_RATE))
    return TrajectorySet(trajs, frame_rate=rate, metadata=meta)


def pooled_times(trajs: Sequence[Trajectory]) -> np.ndarray:
    if not trajs:
        return np.empty(0)
    return np.unique(np.concatenate([tr.t for tr in trajs]))
