"""Speed histograms, walking-time CDFs and the two-sample KS test."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from depthcrowd.calibration import ReplayTask
from depthcrowd.core import Trajectory, TrajectorySet
from depthcrowd.socialforce import ModelParams
from depthcrowd.stats import (gate_crossing_times, ks_statistic, ks_two_sample, replay_trajectories,
                              speed_distribution, walking_time, walking_time_cdf, write_table)

from oracles import kolmogorov_series, ks_by_pooled_points


def straight(id, speed, x0=-1.0, x1=8.0, y=0.0, rate=30.0, t0=0.0):
    n = int(round(abs(x1 - x0) / abs(speed) * rate)) + 1
    t = t0 + np.arange(n) / rate
    x = x0 + np.sign(x1 - x0) * abs(speed) * (t - t0)
    return Trajectory(id, t, np.column_stack([x, np.full(n, y), np.full(n, 1.7)]))


GATE_A = ((0.0, -2.0), (0.0, 2.0))
GATE_B = ((6.0, -2.0), (6.0, 2.0))


# -- speeds -------------------------------------------------------------------------------

def test_constant_speed_set():
    sd = speed_distribution([straight(f"w{i}", 1.0, y=i) for i in range(4)])
    assert sd.mu == pytest.approx(1.0, abs=1e-12) and sd.sigma == pytest.approx(0.0, abs=1e-12)
    assert sd.counts.sum() == 4


def test_two_trajectory_mean():
    sd = speed_distribution([straight("a", 1.1), straight("b", 1.5)])
    assert sd.mu == pytest.approx(1.3, abs=1e-9) and sd.sigma == pytest.approx(0.2, abs=1e-9)


def test_gaussian_recovery():
    rng = np.random.default_rng(0)
    speeds = rng.normal(1.34, 0.25, 500)
    speeds = speeds[speeds > 0.2]
    sd = speed_distribution([straight(f"w{i}", v) for i, v in enumerate(speeds)])
    assert abs(sd.mu - 1.34) < 0.03 and abs(sd.sigma - 0.25) < 0.03
    assert np.allclose(np.diff(sd.edges), 0.1)
    assert sd.counts.sum() == speeds.size
    lines = sd.table().splitlines()
    assert lines[1] == "speed_mps count" and len(lines) == 2 + sd.counts.size


def test_speed_distribution_rejects_empty():
    with pytest.raises(ValueError):
        speed_distribution([])
    with pytest.raises(ValueError):
        speed_distribution([Trajectory("p", [0.0], [[0, 0, 1.7]])])


# -- walking times ------------------------------------------------------------------------------

def test_walking_time_constant_speed():
    assert walking_time(straight("w", 1.5), GATE_A, GATE_B) == pytest.approx(4.0, abs=1e-9)
    back = straight("r", 1.5, x0=8.0, x1=-1.0)
    assert walking_time(back, GATE_A, GATE_B) == pytest.approx(4.0, abs=1e-9)


def test_crossing_time_matches_closed_form():
    tr = Trajectory("d", [0.0, 1.0], [[-1.0, -1.0, 1.7], [1.0, 0.5, 1.7]])
    gate = ((0.2, -3.0), (-0.1, 3.0))
    # Solve p(t) = p0 + t (p1 - p0) on the gate line analytically.
    p0, p1 = np.array([-1.0, -1.0]), np.array([1.0, 0.5])
    g0, g1 = np.array(gate[0]), np.array(gate[1])
    A = np.column_stack([p1 - p0, g0 - g1])
    u, _ = np.linalg.solve(A, g0 - p0)
    assert gate_crossing_times(tr, gate) == pytest.approx([u], abs=1e-12)


def test_misses_are_excluded_and_counted():
    short = straight("s", 1.0, x0=-1.0, x1=3.0)
    cdf = walking_time_cdf([straight("w", 1.5), short], GATE_A, GATE_B)
    assert cdf.times.tolist() == pytest.approx([4.0]) and cdf.excluded == ["s"]
    with pytest.warns(RuntimeWarning):
        empty = walking_time_cdf([short], GATE_A, GATE_B)
    assert empty.times.size == 0 and "excluded=1" in empty.table()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.5, 2.5), min_size=1, max_size=12))
def test_cdf_right_continuous_and_reaches_one(speeds):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cdf = walking_time_cdf([straight(f"w{i}", v) for i, v in enumerate(speeds)], GATE_A, GATE_B)
    assert cdf.cdf[-1] == 1.0 and np.all(np.diff(cdf.cdf) > 0)
    assert np.all(np.diff(cdf.times) >= 0)
    for t in cdf.times:
        assert cdf(t) >= cdf(t - 1e-9)
    assert cdf(cdf.times[-1]) == 1.0 and cdf(cdf.times[0] - 1e-6) == 0.0


def test_replay_trajectories_extend_past_exit():
    obs = straight("w", 1.2, x0=-1.0, x1=5.9)
    out = replay_trajectories([ReplayTask(obs)], ModelParams("A"), extra_time=2.0)
    assert len(out[0]) == len(obs) + 60 and out[0].id == "w"
    assert walking_time(obs, GATE_A, GATE_B) is None
    assert walking_time(out[0], GATE_A, GATE_B) is not None
    assert replay_trajectories([], ModelParams("A")) == []


# -- KS -----------------------------------------------------------------------------------------

def test_ks_trivial_cases():
    r = ks_two_sample([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert r.statistic == 0.0 and r.pvalue == 1.0 and not r.reject()
    assert ks_statistic([1, 2, 3], [10, 11]) == 1.0
    with pytest.raises(ValueError):
        ks_statistic([], [1.0])


def test_ks_thirty_points_against_oracles():
    rng = np.random.default_rng(11)
    a, b = rng.normal(0, 1, 30), rng.normal(0.4, 1.2, 30)
    r = ks_two_sample(a, b)
    assert r.statistic == pytest.approx(ks_by_pooled_points(a, b), abs=1e-15)
    assert r.pvalue == pytest.approx(kolmogorov_series(math.sqrt(15) * r.statistic), abs=1e-6)
    assert r.note == ""


def test_ks_small_sample_note():
    assert "24" in ks_two_sample(np.arange(24.0), np.arange(30.0) + 0.5).note


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 40), st.integers(1, 40))
def test_ks_symmetric_and_transform_invariant(seed, na, nb):
    rng = np.random.default_rng(seed)
    a = np.round(rng.normal(0, 1, na), 1)
    b = np.round(rng.normal(0.3, 1, nb), 1)
    d = ks_statistic(a, b)
    assert d == ks_statistic(b, a)
    assert d == pytest.approx(ks_statistic(np.exp(a), np.exp(b)), abs=1e-15)
    assert d == pytest.approx(ks_by_pooled_points(a, b), abs=1e-15)


def test_ks_text(tmp_path):
    r = ks_two_sample(np.arange(30.0), np.arange(30.0) + 20)
    text = r.to_text()
    assert "reject_same_distribution: True" in text
    write_table(tmp_path / "k.txt", text, ["seed = 3"])
    assert (tmp_path / "k.txt").read_text().startswith("# seed = 3\nks_statistic:")
