"""Extrapolation, gated greedy association and sequence tracking."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from depthcrowd.core import Point3
from depthcrowd.detection import Detection
from depthcrowd.tracking import (ACTIVE, CLOSED, Track, TrackerConfig, associate,
                                 predict_position, track_sequence)

CFG = TrackerConfig()
DT = 1 / 30


def det(x, y, t, z=1.7):
    return Detection(Point3(x, y, z), t, 50)


def track_from(points, times):
    tr = Track("t")
    for p, t in zip(points, times):
        tr.append(det(p[0], p[1], t))
    return tr


def test_constant_velocity_prediction():
    times = np.arange(6) * DT
    tr = track_from([(t * 1.0, 0.0) for t in times], times)
    p = predict_position(tr, times[-1] + DT, CFG)
    assert p.x == pytest.approx(times[-1] + DT, abs=1e-12) and p.y == 0.0


def test_single_point_prediction():
    tr = track_from([(1.0, 2.0)], [0.0])
    assert predict_position(tr, 0.5, CFG) == Point3(1.0, 2.0, 1.7)


def test_window_mean_velocity():
    xs = [0.0, 0.1, 0.15, 0.3, 0.32, 0.5, 0.61]
    times = np.arange(7) * DT
    tr = track_from([(x, 0.0) for x in xs], times)
    k = CFG.history_n
    v = (xs[-1] - xs[-k]) / (times[-1] - times[-k])
    want = xs[-1] + v * DT
    assert predict_position(tr, times[-1] + DT, CFG).x == pytest.approx(want, abs=1e-12)


def test_inside_gate_matched():
    tracks = [track_from([(0, 0)], [0.0])]
    matches, tracks = associate(tracks, [det(0.1, 0, DT)], DT, CFG)
    assert matches == [(0, 0)] and len(tracks) == 1


def test_outside_gate_coasts_and_opens():
    tracks = [track_from([(0, 0)], [0.0])]
    matches, tracks = associate(tracks, [det(2.0, 0, DT)], DT, CFG)
    assert matches == [] and len(tracks) == 2
    assert tracks[0].frames_since_update == 1 and tracks[0].state == ACTIVE


def test_track_closes_after_max_coast():
    tracks = [track_from([(0, 0)], [0.0])]
    for k in range(1, CFG.max_coast + 2):
        _, tracks = associate(tracks, [], k * DT, CFG)
    assert tracks[0].state == CLOSED


def test_mixed_timestamps_rejected():
    with pytest.raises(ValueError):
        associate([], [det(0, 0, 0.0), det(1, 0, DT)], 0.0, CFG)


def test_crossing_walkers_keep_identity():
    # Two walkers crossing an X at 45 degrees; greedy nearest keeps them apart.
    frames = []
    for k in range(90):
        t = k * DT
        s = -1.5 + 1.0 * t
        frames.append((t, [det(s, s, t), det(s, -s, t)]))
    out = track_sequence(frames, CFG)
    assert len(out) == 2
    for tr in out:
        sign = np.sign(tr.xy[0, 1] * tr.xy[0, 0])
        ok = np.sign(tr.xy[:, 1] * tr.xy[:, 0])
        assert np.all((ok == sign) | (np.abs(tr.xy[:, 0]) < 0.1))


def test_empty_and_single_walker():
    assert len(track_sequence([(k * DT, []) for k in range(10)], CFG)) == 0
    frames = [(k * DT, [det(0.03 * k, 0, k * DT)]) for k in range(40)]
    out = track_sequence(frames, CFG)
    assert len(out) == 1 and len(out[0]) == 40
    exact = np.array([[0.03 * k, 0, 1.7] for k in range(40)])
    assert np.array_equal(out[0].xyz, exact)


def test_short_tracks_dropped_and_order_enforced():
    assert len(track_sequence([(0.0, [det(0, 0, 0.0)]), (DT, [det(0, 0, DT)])], CFG)) == 0
    with pytest.raises(ValueError):
        track_sequence([(DT, []), (0.0, [])], CFG)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000))
def test_tracking_invariants(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    start = rng.uniform(-3, 3, (n, 2))
    vel = rng.uniform(-1.5, 1.5, (n, 2))
    frames = []
    for k in range(60):
        t = k * DT
        pos = start + vel * t + rng.normal(0, 0.02, (n, 2))
        keep = rng.random(n) > 0.1
        frames.append((t, [det(p[0], p[1], t) for p, m in zip(pos, keep) if m]))
    out = track_sequence(frames, CFG)
    used = {}
    for tr in out:
        assert np.all(np.diff(tr.t) > 0)
        steps = np.linalg.norm(np.diff(tr.xy, axis=0), axis=1)
        gaps = np.round(np.diff(tr.t) / DT)
        assert np.all(steps <= CFG.gate_radius + 2.0 * gaps * DT + 0.1)
        for t, p in zip(tr.t, tr.xy):
            key = (round(t, 9), round(p[0], 9), round(p[1], 9))
            assert key not in used
            used[key] = tr.id
