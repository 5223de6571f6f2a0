"""Depth rendering, ground truth clipping and the synthetic datasets."""

import numpy as np
import pytest

from depthcrowd.core import Trajectory, TrajectorySet
from depthcrowd.detection import BackgroundModel, DetectionConfig, detect_depth_frame
from depthcrowd.geometry import CameraIntrinsics, top_down_pose
from depthcrowd.socialforce import ModelParams
from depthcrowd.synth import (SensorSpec, SyntheticScene, WalkerSpec, add_position_noise,
                              body_probe_points, contact_free_ids, corridor_scene, default_sensors,
                              ground_truth, peak_density, render_depth, replay_dataset, seam_dataset,
                              static_obstacle_experiment)

INTR = CameraIntrinsics().scaled(2)


def still(id, x, y, h=1.75, t1=1.0):
    return WalkerSpec(id, Trajectory(id, [0.0, t1], [[x, y, h], [x, y, h]]), h)


def moving(id, x0, x1, y=0.0, speed=1.2, h=1.75):
    t1 = abs(x1 - x0) / speed
    return WalkerSpec(id, Trajectory(id, [0.0, t1], [[x0, y, h], [x1, y, h]]), h)


def scene(walkers, sensors=None, sigma=0.0, seed=0, duration=1.0):
    return SyntheticScene(walkers, sensors or default_sensors(1, intrinsics=INTR), sigma, seed,
                          30.0, duration)


# -- rendering ------------------------------------------------------------------------------

def test_empty_scene_all_invalid():
    f = render_depth(scene([]), 0, 0.0)
    assert f.depth.shape == (INTR.height, INTR.width) and np.all(f.depth == 0)


@pytest.mark.parametrize("h", [1.6, 1.75, 2.0])
def test_head_pixel_depth_is_analytic(h):
    sc = scene([still("w", 0.0, 0.0, h)])
    f = render_depth(sc, 0, 0.5)
    cy, cx = INTR.height // 2, INTR.width // 2
    # The centre pixel's ray is vertical and meets the head apex.
    assert f.depth[cy, cx] == pytest.approx(4.5 - h, abs=1e-6)
    noisy = render_depth(scene([still("w", 0.0, 0.0, h)], sigma=0.01), 0, 0.5)
    assert abs(noisy.depth[cy, cx] - (4.5 - h)) < 5 * 0.01


def test_walker_beyond_range_absent():
    high = [SensorSpec(0, top_down_pose(0, 0, 6.5), INTR)]
    assert np.all(render_depth(scene([still("w", 0, 0, 1.7)], high), 0, 0.5).depth == 0)


def test_rendering_deterministic_per_seed():
    sc = scene([still("w", 0.2, 0.1)], sigma=0.01, seed=4)
    a, b = render_depth(sc, 0, 0.5), render_depth(sc, 0, 0.5)
    assert np.array_equal(a.depth, b.depth)
    c = render_depth(scene([still("w", 0.2, 0.1)], sigma=0.01, seed=5), 0, 0.5)
    assert not np.array_equal(a.depth, c.depth)


def test_occlusion_keeps_nearest_surface():
    tall, short = still("t", 0.0, 0.0, 1.95), still("s", 0.0, 0.0, 1.6)
    f = render_depth(scene([short, tall]), 0, 0.5)
    assert f.depth[INTR.height // 2, INTR.width // 2] == pytest.approx(4.5 - 1.95, abs=1e-6)


def test_walker_height_range():
    with pytest.raises(ValueError):
        still("w", 0, 0, 1.3)
    with pytest.raises(ValueError):
        scene([], sigma=-1.0)


def test_noiseless_detection_lies_on_head():
    rng = np.random.default_rng(0)
    for _ in range(10):
        x, y, h = rng.uniform(-1, 1), rng.uniform(-0.7, 0.7), rng.uniform(1.6, 2.0)
        w = still("w", x, y, h)
        sc = scene([w])
        s = sc.sensors[0]
        dets = detect_depth_frame(render_depth(sc, s, 0.5), s.intrinsics, s.pose, BackgroundModel(),
                                  DetectionConfig())
        assert len(dets) == 1
        p = np.array([dets[0].position.x, dets[0].position.y, dets[0].position.z])
        assert abs(np.linalg.norm(p - [x, y, w.head_center_z]) - w.head_radius) < 0.02
        assert 0 <= h - p[2] < 0.02
        assert np.hypot(p[0] - x, p[1] - y) <= w.head_radius + 0.02


# -- ground truth ------------------------------------------------------------------------------

def test_walker_inside_one_view_matches_global():
    sc = scene([still("w", 0.3, 0.2)])
    per, glob = ground_truth(sc)
    assert per[0].ids == glob.ids == ["w"]
    assert np.array_equal(per[0][0].t, glob[0].t) and np.allclose(per[0][0].xyz, glob[0].xyz)


def test_seam_crossing_segments_cover_global():
    sensors = default_sensors(2, intrinsics=INTR)
    w = moving("w", -2.5, 5.3)
    sc = scene([w], sensors, duration=7.0)
    per, glob = ground_truth(sc)
    g = glob[0]
    seen = np.zeros(len(g), dtype=bool)
    for sid in (0, 1):
        assert per[sid].ids == ["w"]
        seg = per[sid][0]
        idx = np.searchsorted(g.t, seg.t)
        assert np.allclose(g.t[idx], seg.t) and np.allclose(g.xyz[idx], seg.xyz)
        seen[idx] = True
    inside = np.flatnonzero(seen)
    assert np.all(seen[inside[0]:inside[-1] + 1])


def test_clip_boundaries_match_frustum():
    w = moving("w", -3.0, 3.0)
    sc = scene([w], duration=5.0)
    per, _ = ground_truth(sc)
    seg = per[0][0]
    s = sc.sensors[0]
    H = s.pose.translation[2]
    f, cx = INTR.focal_length_px, INTR.cx
    probe = body_probe_points(w, np.zeros(2))
    # A probe point at height z and x offset dx is inside while |x + dx| * f / (H - z) < cx.
    x_lo = max(-cx * (H - z) / f - dx for dx, _, z in probe)
    x_hi = min((cx - 1e-9) * (H - z) / f - dx for dx, _, z in probe)
    t_in, t_out = (x_lo + 3.0) / 1.2, (x_hi + 3.0) / 1.2
    assert t_in <= seg.t[0] < t_in + 1 / 30 + 1e-9
    assert t_out - 1 / 30 - 1e-9 < seg.t[-1] <= t_out


# -- scenes and datasets ------------------------------------------------------------------------

def test_corridor_scene_properties():
    sc = corridor_scene(n_walkers=5, duration=30.0, seed=1)
    assert len(sc.walkers) == 5 and len(sc.sensors) == 3
    assert all(1.4 <= w.height <= 2.1 for w in sc.walkers)
    assert peak_density(sc) <= 0.5
    assert sc.frame_times.size == 30 * 30
    again = corridor_scene(n_walkers=5, duration=30.0, seed=1)
    assert all(np.array_equal(a.path.xyz, b.path.xyz) for a, b in zip(sc.walkers, again.walkers))


def test_seam_dataset_shape():
    a, b, truth = seam_dataset(seed=3)
    assert len(a) + len(b) == 45 and len(truth) == 20
    ids = set(a.ids) | set(b.ids)
    for pa, pb in truth:
        assert pa in ids and pb in ids
    by = {**a.by_id(), **b.by_id()}
    for end, start in truth:
        # Parts of one walker overlap briefly around the seam.
        assert by[end].end_time > by[start].start_time
        assert by[end].end_time - by[start].start_time < 2.0
    a2, _, truth2 = seam_dataset(seed=3)
    assert truth2 == truth and np.array_equal(a2[0].xyz, a[0].xyz)


def test_static_obstacle_experiment():
    run = static_obstacle_experiment(12, ModelParams("C"), seed=2)
    st = run.trajectories.by_id()["static"]
    assert np.allclose(st.xy, [5.0, 0.0])
    walkers = [tr for tr in run.trajectories if tr.id != "static"]
    assert len(walkers) == 12 and len(run.desired_speeds) == 12
    assert all(tr.end_time <= st.end_time + 1e-9 for tr in walkers)


def test_replay_dataset_snaps_goal_and_adds_noise():
    clean = replay_dataset(ModelParams("A"), 8, seed=1, noise=0.0)
    noisy = replay_dataset(ModelParams("A"), 8, seed=1, noise=0.01)
    for a in clean.trajectories:
        if a.id == "static":
            continue
        assert a.xy[-1, 0] in (0.0, 10.0)
        b = noisy.trajectories.by_id()[a.id]
        d = b.xy - a.xy
        assert np.array_equal(a.t, b.t) and 0.003 < d.std() < 0.02


def test_position_noise_and_contact():
    tr = Trajectory("a", np.arange(2000) / 30, np.zeros((2000, 3)))
    out = add_position_noise(TrajectorySet([tr]), 0.05, seed=0)[0]
    assert out.xy.std(axis=0) == pytest.approx([0.05, 0.05], rel=0.1)
    assert np.all(out.xyz[:, 2] == 0)
    a = Trajectory("a", [0, 1, 2], [[0, 0, 0], [1, 0, 0], [2, 0, 0]])
    b = Trajectory("b", [0, 1, 2], [[0, 2, 0], [1, 0.3, 0], [2, 2, 0]])
    c = Trajectory("c", [5, 6], [[0, 0, 0], [1, 0, 0]])
    assert contact_free_ids(TrajectorySet([a, b, c]), 0.5) == ["c"]
    assert contact_free_ids(TrajectorySet([a, b, c]), 0.2) == ["a", "b", "c"]
