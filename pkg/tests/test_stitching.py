"""Endpoint features, Hungarian assignment, iterative stitching and spline smoothing."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from depthcrowd.core import Trajectory, TrajectorySet
from depthcrowd.metrics import stitch_tpr
from depthcrowd.stitching import (EndpointFeature, StitchConfig, build_distance_matrix,
                                  endpoint_distance, hungarian_assign, iterative_stitch,
                                  merge_pooled, read_match_report, smooth_spline, stitch_sensors,
                                  write_match_report)
from depthcrowd.synth import seam_dataset

from oracles import assignment_by_permutations


def line(id, t0, t1, x0, x1, y=0.0, z=1.7, rate=30.0):
    t = np.arange(t0, t1 + 1e-9, 1 / rate)
    x = np.interp(t, [t0, t1], [x0, x1])
    return Trajectory(id, t, np.column_stack([x, np.full_like(t, y), np.full_like(t, z)]))


def test_endpoint_distance_cases():
    e = EndpointFeature(1.0, 2.0, 3.0, 1.7)
    assert endpoint_distance(e, e) == 0.0
    assert endpoint_distance(e, EndpointFeature(4.0, 2.0, 3.0, 1.7)) == pytest.approx(3.0)
    assert endpoint_distance(e, EndpointFeature(2.0, 4.0, 5.0, 1.7)) == pytest.approx(3.0)


def test_distance_matrix_shapes_and_padding():
    a = line("a", 0, 1, 0, 1)
    b = Trajectory("b", [3.0, 3.1], [[1, 0, 1.7], [1.1, 0, 1.7]])
    assert np.allclose(build_distance_matrix([a], [b]), [[2.0]])
    m = build_distance_matrix([a, line("c", 0, 2, 0, 1)], [b])
    assert m.shape == (2, 2) and m[0, 1] == m[1, 1] == m[:, 0].max() + 1


def test_distance_matrix_entries_match_oracle():
    rng = np.random.default_rng(0)
    ends = [Trajectory(f"e{i}", np.sort(rng.uniform(0, 5, 3)), rng.normal(size=(3, 3))) for i in range(4)]
    starts = [Trajectory(f"s{i}", np.sort(rng.uniform(0, 5, 3)), rng.normal(size=(3, 3))) for i in range(3)]
    m = build_distance_matrix(ends, starts)
    for i, e in enumerate(ends):
        for j, s in enumerate(starts):
            assert m[i, j] == pytest.approx(endpoint_distance(EndpointFeature.last(e),
                                                              EndpointFeature.first(s)), abs=1e-12)
    assert np.all(m[:, 3] > m[:4, :3].max())


def test_hungarian_small_cases():
    c = 1 - np.eye(4)
    assign, cost = hungarian_assign(c)
    assert assign.tolist() == [0, 1, 2, 3] and cost == 0
    assert hungarian_assign([[5.0]])[0].tolist() == [0]
    with pytest.raises(ValueError):
        hungarian_assign(np.ones((2, 3)))
    with pytest.raises(ValueError):
        hungarian_assign([[np.inf]])


def test_hungarian_six_by_six():
    rng = np.random.default_rng(1)
    c = rng.uniform(0, 10, (6, 6))
    assign, cost = hungarian_assign(c)
    assert sorted(assign.tolist()) == list(range(6))
    assert cost == pytest.approx(assignment_by_permutations(c), abs=1e-9)


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 7), st.integers(0, 10**6), st.booleans())
def test_hungarian_matches_bruteforce(n, seed, integer):
    rng = np.random.default_rng(seed)
    c = rng.integers(0, 5, (n, n)).astype(float) if integer else rng.uniform(-5, 5, (n, n))
    assign, cost = hungarian_assign(c)
    assert sorted(assign.tolist()) == list(range(n))
    assert cost == pytest.approx(assignment_by_permutations(c), abs=1e-9)


def test_disjoint_sets_pass_through():
    a = TrajectorySet([line("a1", 0, 2, 0, 2)])
    b = TrajectorySet([line("b1", 60, 62, 50, 52)])
    merged, report = iterative_stitch(a, b)
    assert sorted(merged.ids) == ["a1", "b1"]
    assert not any(r.accepted for r in report)


def test_split_walker_merged():
    a = TrajectorySet([line("a1", 0, 3, -3, 0)])
    b = TrajectorySet([line("b1", 3.2, 6, 0.1, 3)])
    merged, report = iterative_stitch(a, b)
    assert merged.ids == ["a1+b1"]
    assert [r.round_h for r in report if r.accepted] == [3.0]


def test_id_collisions_rekeyed():
    a = TrajectorySet([line("x", 0, 3, -3, 0)])
    b = TrajectorySet([line("x", 3.2, 6, 0.1, 3)])
    merged, _ = iterative_stitch(a, b)
    assert merged.ids == ["A/x+B/x"]


def test_seam_window_blocks_long_overlap():
    a = TrajectorySet([line("a1", 0, 6, -3, 3)])
    b = TrajectorySet([line("b1", 2, 8, -1, 5)])
    _, report = iterative_stitch(a, b, StitchConfig(h_start=100, h_step=1, h_max=100))
    assert not any(r.accepted for r in report)


def test_seam_dataset_tpr_and_iteration_pattern():
    a, b, truth = seam_dataset(seed=0)
    for h in (3.0, 6.0):
        _, rep = iterative_stitch(a, b, StitchConfig(h_start=h, h_step=h, h_max=h))
        assert stitch_tpr(rep, truth) >= 0.95
    _, single = iterative_stitch(a, b, StitchConfig(h_start=23, h_step=23, h_max=23))
    _, iterative = iterative_stitch(a, b, StitchConfig())
    assert stitch_tpr(iterative, truth) >= stitch_tpr(single, truth)
    assert all(r.cost < 23 for r in iterative if r.accepted)


def test_merge_pooled_averages_duplicates():
    p = Trajectory("p", [0.0, 1.0], [[0, 0, 1], [1, 0, 1]])
    q = Trajectory("q", [1.0005, 2.0], [[1.2, 0, 1], [2, 0, 1]])
    m = merge_pooled([q, p], "m")
    assert len(m) == 3 and m.xyz[1, 0] == pytest.approx(1.1)


def test_spline_reproduces_cubic_and_line():
    t = np.arange(40) / 30
    x = 0.5 * t ** 3 - t ** 2 + 2 * t + 1
    tr = Trajectory("c", t, np.column_stack([x, 1.3 * t - 0.2, np.full(40, 1.7)]))
    s = smooth_spline(tr, 30.0)
    assert np.max(np.abs(s.xy[:, 0] - x)) < 1e-6
    assert np.max(np.abs(s.xy[:, 1] - (1.3 * t - 0.2))) < 1e-6


def test_spline_reduces_noise_and_keeps_endpoints():
    rng = np.random.default_rng(2)
    t = np.arange(90) / 30
    truth = np.column_stack([1.2 * t, 0.3 * t])
    noisy = truth + rng.normal(0, 0.03, truth.shape)
    tr = Trajectory("n", t, np.column_stack([noisy, np.full(90, 1.7)]))
    for noise in (None, 0.03):
        s = smooth_spline(tr, 30.0, noise)
        assert np.sqrt(np.mean(np.sum((s.xy - truth) ** 2, 1))) < \
            np.sqrt(np.mean(np.sum((noisy - truth) ** 2, 1)))
        assert np.linalg.norm(s.xy[0] - noisy[0]) < 0.05 and np.linalg.norm(s.xy[-1] - noisy[-1]) < 0.05
        assert np.all(s.xyz[:, 2] == tr.mean_height)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fast_gcv_matches_library_search(seed):
    from scipy.interpolate import make_smoothing_spline
    from depthcrowd.stitching import _GcvSearch, _penalty_matrix
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, 10, 150))
    y = np.sin(t) + rng.normal(0, 0.1, t.size)
    # The penalty matrix carries the library's weight scaling.
    g = np.linalg.solve(np.eye(t.size) + 0.2 * _penalty_matrix(t), y)
    assert np.allclose(g, make_smoothing_spline(t, y, lam=0.2)(t), atol=1e-7)
    fast = make_smoothing_spline(t, y, lam=_GcvSearch(t).lam(y))(t)
    assert np.allclose(fast, make_smoothing_spline(t, y)(t), atol=1e-5)


def test_spline_short_input_unchanged():
    tr = Trajectory("s", [0, 0.1, 0.2], np.zeros((3, 3)))
    assert smooth_spline(tr, 30.0) is tr


def test_stitch_sensors_single_and_chain():
    a = TrajectorySet([line("a1", 0, 3, -3, 0)])
    b = TrajectorySet([line("b1", 3.1, 6, 0.1, 3)])
    c = TrajectorySet([line("c1", 6.1, 9, 3.1, 6)])
    merged, report = stitch_sensors([a, b, c], StitchConfig(h_start=0.5, h_step=0.5, h_max=1.5))
    assert merged.ids == ["a1+b1+c1"] and sum(r.accepted for r in report) == 2
    assert np.allclose(np.diff(merged[0].t), 1 / 30)


def test_report_roundtrip(tmp_path):
    a, b, truth = seam_dataset(seed=1)
    _, rep = iterative_stitch(a, b)
    write_match_report(tmp_path / "r.txt", rep, ["seed = 1"])
    back = read_match_report(tmp_path / "r.txt")
    assert [(r.id_end, r.id_start, r.accepted) for r in back] == \
        [(r.id_end, r.id_start, r.accepted) for r in rep]
