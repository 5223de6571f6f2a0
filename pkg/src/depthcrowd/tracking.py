"""Frame-to-frame association of detections into trajectories.

Each track predicts its next position by linear extrapolation over its last
``history_n`` points; detections are matched to predictions greedily,
globally nearest pair first, inside a fixed gate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import Point3, Trajectory, TrajectorySet
from .detection import Detection

ACTIVE = "active"
CLOSED = "closed"


@dataclass(frozen=True)
class TrackerConfig:
    history_n: int = 5
    gate_radius: float = 0.5
    max_coast: int = 5
    frame_rate: float = 30.0
    min_length: int = 3

    def __post_init__(self):
        if self.history_n < 1:
            raise ValueError("history_n must be >= 1")
        if self.gate_radius <= 0:
            raise ValueError("gate_radius must be positive")
        if self.max_coast < 0:
            raise ValueError("max_coast must be >= 0")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")


@dataclass
class Track:
    id: str
    times: list[float] = field(default_factory=list)
    positions: list[tuple[float, float, float]] = field(default_factory=list)
    frames_since_update: int = 0
    state: str = ACTIVE

    @property
    def trajectory(self) -> Trajectory:
        return Trajectory(self.id, self.times, self.positions)

    def append(self, det: Detection) -> None:
        self.times.append(float(det.t))
        self.positions.append(tuple(det.position))
        self.frames_since_update = 0


def predict_position(track: Track, t_next: float, cfg: TrackerConfig) -> Point3:
    """Extrapolate with the mean velocity over the last ``history_n`` points."""
    if not track.times:
        raise ValueError("cannot predict an empty track")
    k = min(cfg.history_n, len(track.times))
    last = np.asarray(track.positions[-1], dtype=float)
    if k < 2:
        return Point3(*map(float, last))
    first = np.asarray(track.positions[-k], dtype=float)
    vel = (last - first) / (track.times[-1] - track.times[-k])
    return Point3(*map(float, last + vel * (t_next - track.times[-1])))


def associate(tracks: list[Track], detections: Sequence[Detection], t: float,
              cfg: TrackerConfig, new_id=None) -> tuple[list[tuple[int, int]], list[Track]]:
    """Match ``detections`` at time ``t`` to the active ``tracks``.

    Returns the accepted ``(track_index, detection_index)`` pairs and the
    updated track list (matched tracks extended, unmatched detections
    opened as new tracks, unmatched tracks coasting or closed). ``new_id``
    is a callable producing ids for opened tracks.
    """
    if any(d.t != t for d in detections):
        raise ValueError("all detections passed to associate must share timestamp t")
    if new_id is None:
        counter = iter(range(len(tracks), 1 << 62))
        new_id = lambda: f"trk{next(counter):06d}"  # noqa: E731
    active = [i for i, tr in enumerate(tracks) if tr.state == ACTIVE]
    pairs: list[tuple[float, int, int]] = []
    if active and detections:
        pred = np.array([predict_position(tracks[i], t, cfg) for i in active])
        det = np.array([tuple(d.position) for d in detections])
        dist = np.hypot(pred[:, None, 0] - det[None, :, 0], pred[:, None, 1] - det[None, :, 1])
        ii, jj = np.nonzero(dist <= cfg.gate_radius)
        pairs = sorted(zip(dist[ii, jj].tolist(), ii.tolist(), jj.tolist()))
    used_t, used_d = set(), set()
    matches = []
    for _, a, j in pairs:
        if a in used_t or j in used_d:
            continue
        used_t.add(a)
        used_d.add(j)
        matches.append((active[a], j))
    for i, j in matches:
        tracks[i].append(detections[j])
    matched_tracks = {i for i, _ in matches}
    for i in active:
        if i not in matched_tracks:
            tracks[i].frames_since_update += 1
            if tracks[i].frames_since_update > cfg.max_coast:
                tracks[i].state = CLOSED
    for j, d in enumerate(detections):
        if j not in used_d:
            tr = Track(new_id())
            tr.append(d)
            tracks.append(tr)
    return sorted(matches), tracks


def track_sequence(frames: Iterable[tuple[float, Sequence[Detection]]], cfg: TrackerConfig,
                   id_prefix: str = "s0") -> TrajectorySet:
    """Fold :func:`associate` over time-ordered ``(t, detections)`` frames.

    Tracks shorter than ``cfg.min_length`` points are discarded.
    """
    tracks: list[Track] = []
    counter = iter(range(1 << 62))

    def new_id():
        return f"{id_prefix}-{next(counter):05d}"

    last_t = None
    for t, dets in frames:
        if last_t is not None and t <= last_t:
            raise ValueError(f"frames out of order: {t} after {last_t}")
        last_t = t
        _, tracks = associate(tracks, list(dets), t, cfg, new_id)
    kept = [tr.trajectory for tr in tracks if len(tr.times) >= cfg.min_length]
    meta = {"tracker.history_n": cfg.history_n, "tracker.gate_radius": cfg.gate_radius,
            "tracker.max_coast": cfg.max_coast}
    return TrajectorySet(kept, frame_rate=cfg.frame_rate,
                         metadata={k: repr(v) for k, v in meta.items()})
