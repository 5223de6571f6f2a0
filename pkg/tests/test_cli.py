"""Command-line front end: exit codes, file contracts and rerun determinism."""

import numpy as np
import pytest

from depthcrowd.calibration import FitResult
from depthcrowd.cli import main, stage_seed
from depthcrowd.core import Trajectory, TrajectorySet, read_trajectories, write_trajectories
from depthcrowd.detection import BackgroundModel, write_background
from depthcrowd.geometry import top_down_pose, write_calibration
from depthcrowd.socialforce import ModelParams


def body(path):
    return [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]


def kv(path):
    out = {}
    for ln in body(path):
        k, sep, v = ln.partition(":")
        if sep:
            out[k.strip()] = v.strip()
    return out


def write_cfg(tmp_path, **items):
    p = tmp_path / "cfg.txt"
    p.write_text("".join(f"{k} = {v}\n" for k, v in items.items()))
    return str(p)


def walker_set(n=3):
    trs = []
    for i in range(n):
        t = np.arange(60) / 30.0
        xyz = np.column_stack([1.2 * t, np.full(60, i * 1.0), np.full(60, 1.7)])
        trs.append(Trajectory(f"w{i}", t, xyz))
    return TrajectorySet(trs)


FAST_FIT = {"synth.kind": "crowd", "synth.n_walkers": 10, "ga.population": 6,
            "ga.generations": 3, "nm.max_iter": 10}


# -- exit codes and config ----------------------------------------------------------------------

def test_usage_errors_exit_one(tmp_path, capsys):
    assert main([]) == 1
    assert main(["nonsense"]) == 1
    assert main(["stitch", "--out", str(tmp_path)]) == 1
    assert main(["synth", "--seed", "-1", "--out", str(tmp_path)]) == 1
    assert main(["synth", "--seed", str(2 ** 64), "--out", str(tmp_path)]) == 1
    assert "error:" in capsys.readouterr().err


def test_config_errors_exit_one(tmp_path):
    out = str(tmp_path / "o")
    assert main(["synth", "--config", write_cfg(tmp_path, **{"synth.bogus": 1}), "--out", out]) == 1
    assert main(["synth", "--config", write_cfg(tmp_path, **{"nope.kind": 1}), "--out", out]) == 1
    assert main(["synth", "--config", write_cfg(tmp_path, **{"synth.n_pairs": "x"}),
                 "--out", out]) == 1
    assert main(["synth", "--config", write_cfg(tmp_path, **{"synth.kind": "maze"}),
                 "--out", out]) == 1
    assert main(["synth", "--config", str(tmp_path / "missing.txt"), "--out", out]) == 1


def test_missing_input_exit_one(tmp_path):
    assert main(["evaluate", str(tmp_path / "a.csv"), str(tmp_path / "b.csv"),
                 "--out", str(tmp_path)]) == 1


def test_stage_seeds_differ():
    assert stage_seed(0, "synth") != stage_seed(0, "noise")
    assert stage_seed(1, "synth") != stage_seed(2 ** 32 + 1, "synth")
    assert stage_seed(7, "detect", 0, 3) == stage_seed(7, "detect", 0, 3)


# -- single commands -------------------------------------------------------------------------------

def test_stitch_single_file_passthrough(tmp_path):
    src = tmp_path / "t.csv"
    write_trajectories(src, walker_set(), {})
    assert main(["stitch", str(src), "--out", str(tmp_path / "o")]) == 0
    merged = read_trajectories(tmp_path / "o" / "merged.csv")
    orig = read_trajectories(src)
    assert merged.ids == orig.ids
    assert all(np.array_equal(a.xyz, b.xyz) for a, b in zip(merged, orig))


def test_evaluate_identical_files(tmp_path):
    src = tmp_path / "t.csv"
    write_trajectories(src, walker_set(), {})
    assert main(["evaluate", str(src), str(src), "--out", str(tmp_path)]) == 0
    rep = kv(tmp_path / "evaluation.txt")
    assert float(rep["pdr"]) == 1.0 and float(rep["motp_m"]) == 0.0


def test_evaluate_empty_truth_strict(tmp_path):
    auto, truth = tmp_path / "a.csv", tmp_path / "t.csv"
    write_trajectories(auto, walker_set(), {})
    write_trajectories(truth, TrajectorySet([]), {})
    assert main(["evaluate", str(auto), str(truth), "--out", str(tmp_path)]) == 0
    assert main(["evaluate", str(auto), str(truth), "--out", str(tmp_path), "--strict"]) == 2


def test_calibrate_missing_sensor_warns(tmp_path):
    out = tmp_path / "s"
    assert main(["synth", "--out", str(out), "--config",
                 write_cfg(tmp_path, **{"synth.n_walkers": 1})]) == 0
    matches = out / "matches.txt"
    cfg = write_cfg(tmp_path, **{"calibrate.sensors": "0 1 2 7"})
    args = ["calibrate-sensors", str(matches), "--config", cfg, "--out", str(tmp_path / "c")]
    assert main(args) == 0
    rows = body(tmp_path / "c" / "calibration_rmse.txt")
    assert rows[-1] == "7 0 nan missing"
    assert all(r.endswith(" ok") for r in rows[1:4])
    assert main(args + ["--strict"]) == 2


def test_track_empty_frame_dir(tmp_path):
    frames = tmp_path / "frames"
    frames.mkdir()
    write_background(tmp_path / "bg.txt", BackgroundModel())
    write_calibration(tmp_path / "cal.txt", {0: top_down_pose(0, 0, 4.5)}, [])
    assert main(["track", str(frames), "--background", str(tmp_path / "bg.txt"),
                 "--calibration", str(tmp_path / "cal.txt"), "--out", str(tmp_path / "o")]) == 0
    assert body(tmp_path / "o" / "track_log.txt") == []
    assert not list((tmp_path / "o").glob("tracks_s*.csv"))


def test_validate_lone_walkers_replay_measured_times(tmp_path):
    # Lone constant-speed walkers replay unchanged, so simulated times match measured ones
    # up to integration rounding.
    trs = []
    for i in range(6):
        t = np.arange(300) / 30.0
        trs.append(Trajectory(f"w{i}", t, np.column_stack([1.2 * t, np.full(300, 6.0 * i),
                                                           np.full(300, 1.7)])))
    src = tmp_path / "t.csv"
    write_trajectories(src, TrajectorySet(trs), {})
    fit = tmp_path / "fit_A.txt"
    fit.write_text(FitResult(ModelParams("A"), 0.0, None, [], [], 0).to_text())
    out = tmp_path / "o"
    rc = main(["validate", str(fit), "--trajectories", str(src), "--gate-a", "2", "-3", "2", "40",
               "--gate-b", "8", "-3", "8", "40", "--out", str(out)])
    assert rc == 0
    lines = body(out / "validation.txt")
    assert lines[0] == "measured n=6 gate_misses=0"
    assert lines[1].startswith("model fit_A variant=A n=6 gate_misses=0 D=")
    meas = np.loadtxt(body(out / "cdf_measured.txt")[1:])
    sim = np.loadtxt(body(out / "cdf_fit_A.txt")[1:])
    assert np.allclose(meas, sim, atol=1e-4)


def test_validate_fit_against_itself_via_files(tmp_path):
    # The measured CDF written by validate, read back and compared with itself, gives D = 0.
    from depthcrowd.stats import ks_two_sample
    src = tmp_path / "t.csv"
    write_trajectories(src, walker_set(4), {})
    fit = tmp_path / "fit_A.txt"
    fit.write_text(FitResult(ModelParams("A"), 0.0, None, [], [], 0).to_text())
    assert main(["validate", str(fit), "--trajectories", str(src), "--gate-a", "0.1", "-3", "0.1", "9",
                 "--gate-b", "1.5", "-3", "1.5", "9", "--out", str(tmp_path / "o")]) == 0
    meas = np.loadtxt(body(tmp_path / "o" / "cdf_measured.txt")[1:])[:, 0]
    r = ks_two_sample(meas, meas)
    assert r.statistic == 0.0 and r.pvalue == 1.0


# -- pipelines and determinism ------------------------------------------------------------------

def outputs(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def corridor(tmp_path_factory):
    d = tmp_path_factory.mktemp("corridor")
    assert main(["synth", "--seed", "3", "--out", str(d / "s")]) == 0
    return d


def test_synth_corridor_frame_count(corridor):
    s = corridor / "s"
    summary = body(s / "synth_summary.txt")
    assert "walkers 4" in summary and "frames_per_sensor 600" in summary
    for sid in range(3):
        assert len(list((s / "frames").glob(f"s{sid}_*.dpf"))) == 20 * 30
    assert len(read_trajectories(s / "truth.csv")) == 4


def test_corridor_pipeline(corridor):
    s, d = corridor / "s", corridor
    assert main(["calibrate-sensors", str(s / "matches.txt"), "--out", str(d / "c")]) == 0
    assert main(["track", str(s / "frames"), "--background", str(s / "background.txt"),
                 "--calibration", str(d / "c" / "calibration.txt"), "--out", str(d / "t")]) == 0
    tracks = [str(d / "t" / f"tracks_s{i}.csv") for i in range(3)]
    assert main(["stitch", *tracks, "--out", str(d / "m")]) == 0
    assert main(["evaluate", str(d / "m" / "merged.csv"), str(s / "truth.csv"),
                 "--out", str(d / "e")]) == 0
    rep = kv(d / "e" / "evaluation.txt")
    assert float(rep["pdr"]) == 1.0 and float(rep["motp_m"]) < 0.05


def test_track_uncalibrated_sensor_partial_output(corridor, tmp_path):
    s = corridor / "s"
    frames = tmp_path / "frames"
    frames.mkdir()
    for p in sorted((s / "frames").glob("s*_0000[0-9][0-9].dpf")):
        (frames / p.name).write_bytes(p.read_bytes())
    from depthcrowd.geometry import read_calibration
    poses = read_calibration(s / "calibration.txt")
    write_calibration(tmp_path / "cal.txt", {0: poses[0], 2: poses[2]}, [])
    args = ["track", str(frames), "--background", str(s / "background.txt"),
            "--calibration", str(tmp_path / "cal.txt"), "--out", str(tmp_path / "o")]
    assert main(args) == 0
    assert sorted(p.name for p in (tmp_path / "o").glob("tracks_s*.csv")) == \
        ["tracks_s0.csv", "tracks_s2.csv"]
    assert "sensor 1 uncalibrated" in body(tmp_path / "o" / "track_log.txt")
    assert main(args + ["--strict"]) == 2


def test_seam_synth_stitch_rerun_byte_identical(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, **{"synth.kind": "seam", "stitch.h_start": 3, "stitch.h_step": 3,
                                 "stitch.h_max": 6})
    for run in ("r1", "r2"):
        # Input paths are recorded in headers, so each rerun uses the same relative paths.
        (tmp_path / run).mkdir()
        monkeypatch.chdir(tmp_path / run)
        assert main(["synth", "--config", cfg, "--seed", "11"]) == 0
        assert main(["stitch", "seam_a.csv", "seam_b.csv", "--config", cfg, "--seed", "11"]) == 0
    a, b = outputs(tmp_path / "r1"), outputs(tmp_path / "r2")
    assert set(a) >= {"seam_a.csv", "seam_b.csv", "truth_pairs.txt", "merged.csv", "match_report.txt"}
    assert a == b
    assert main(["synth", "--config", cfg, "--seed", "12", "--out", str(tmp_path / "r3")]) == 0
    assert outputs(tmp_path / "r3")["seam_a.csv"] != a["seam_a.csv"]


def test_crowd_fit_validate_rerun_byte_identical(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, **FAST_FIT)
    for run in ("r1", "r2"):
        (tmp_path / run).mkdir()
        monkeypatch.chdir(tmp_path / run)
        assert main(["synth", "--config", cfg, "--seed", "5", "--out", "s"]) == 0
        assert main(["fit", "s/trajectories.csv", "--scene", "s/scene.txt", "--variant", "C",
                     "--config", cfg, "--seed", "5", "--out", "f"]) == 0
        assert main(["validate", "f/fit_C.txt", "--trajectories", "s/trajectories.csv",
                     "--gate-a", "2", "-2", "2", "2", "--gate-b", "8", "-2", "8", "2",
                     "--seed", "5", "--out", "v"]) == 0
    a, b = outputs(tmp_path / "r1"), outputs(tmp_path / "r2")
    assert {"f/fit_C.txt", "f/fit_summary.txt", "v/validation.txt"} <= set(a)
    assert a == b
    assert len(read_trajectories(tmp_path / "r1" / "s" / "trajectories.csv")) == 11
