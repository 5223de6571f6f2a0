"""Batch command-line front end.

Every command reads files, writes files into ``--out`` and is a pure
function of its inputs, the config file and ``--seed``. Each text output
starts with ``# key = value`` lines holding the effective configuration.

Exit codes: 0 success, 1 input error, 2 degenerate data under ``--strict``.
"""

from __future__ import annotations

import argparse
import sys
import warnings
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .calibration import (GAConfig, NMConfig, ObjectiveConfig, OptimizerConfig, build_tasks,
                          fit_model, read_fit, split_dataset)
from .core import TrajectorySet, read_trajectories, write_trajectories
from .detection import BackgroundModel, DetectionConfig, detect_depth_frame, read_background, \
    write_background
from .geometry import (CameraIntrinsics, PointMatch, Point3, RankError, calibration_rmse,
                       estimate_rigid_transform, read_calibration, read_depth_frame,
                       read_point_matches, write_calibration, write_depth_frame, write_point_matches)
from .metrics import evaluate
from .socialforce import ModelParams, Obstacle, read_scene, segments_array, write_scene
from .stats import ks_two_sample, replay_trajectories, walking_time_cdf
from .stitching import StitchConfig, stitch_sensors, write_match_report
from .synth import (CorridorSpec, corridor_scene, covered_truth, ground_truth, render_depth,
                    seam_dataset, static_obstacle_experiment, add_position_noise)
from .tracking import TrackerConfig, track_sequence

EXIT_OK, EXIT_INPUT, EXIT_DEGENERATE = 0, 1, 2


class InputError(Exception):
    """Bad command line, config or input file."""


# -- configuration ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalSettings:
    max_dist: float = 0.5


@dataclass(frozen=True)
class FitSettings:
    fit_tau: bool = False
    fit_anisotropy: bool = False


@dataclass(frozen=True)
class ValidateSettings:
    alpha: float = 0.05
    extra_time: float = 5.0


@dataclass(frozen=True)
class CalibrateSettings:
    sensors: str = ""  # expected sensor ids, blank means whatever the file holds


@dataclass(frozen=True)
class SynthSettings:
    kind: str = "corridor"
    n_walkers: int = 4
    duration: float = 20.0
    dense: bool = False
    noise: float = 0.01
    n_sensors: int = 3
    n_matches: int = 10
    match_noise: float = 0.005
    n_pairs: int = 20
    n_distractors: int = 5
    variant: str = "C"
    walls: bool = True


# Stitching defaults for the sensor pipeline: adjacent fragments overlap, so
# endpoint costs of true matches stay well below one.
PIPELINE_STITCH = StitchConfig(h_start=0.5, h_step=0.5, h_max=1.5)
PIPELINE_CAMERA = CameraIntrinsics().scaled(2)

SECTIONS = {
    "camera": PIPELINE_CAMERA,
    "detection": DetectionConfig(),
    "tracker": TrackerConfig(),
    "stitch": PIPELINE_STITCH,
    "eval": EvalSettings(),
    "objective": ObjectiveConfig(),
    "ga": GAConfig(),
    "nm": NMConfig(),
    "fit": FitSettings(),
    "model": ModelParams(),
    "validate": ValidateSettings(),
    "calibrate": CalibrateSettings(),
    "synth": SynthSettings(),
}

COMMAND_SECTIONS = {
    "calibrate-sensors": ("calibrate",),
    "track": ("camera", "detection", "tracker"),
    "stitch": ("stitch",),
    "evaluate": ("eval",),
    "fit": ("objective", "ga", "nm", "fit", "model"),
    "validate": ("objective", "validate"),
    "synth": ("synth", "camera", "model"),
}


def _parse_value(text: str, default, key: str):
    t = text.strip()
    try:
        if isinstance(default, bool):
            if t.lower() in ("true", "yes", "1"):
                return True
            if t.lower() in ("false", "no", "0"):
                return False
            raise ValueError(t)
        if isinstance(default, int):
            return int(t)
        if isinstance(default, float) or default is None:
            return None if t.lower() == "none" else float(t)
        return t
    except ValueError:
        raise InputError(f"config key {key}: cannot parse {text!r}") from None


def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment line."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    for n, line in enumerate(lines, 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        key, sep, value = s.partition("=")
        if not sep or not key.strip():
            raise InputError(f"{path}:{n}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def build_sections(raw: dict[str, str]) -> dict[str, object]:
    """Apply config overrides to the default section objects; unknown keys are errors."""
    values: dict[str, dict] = {name: {} for name in SECTIONS}
    for key, text in raw.items():
        sec, _, name = key.partition(".")
        if sec not in SECTIONS:
            raise InputError(f"unknown config section in {key!r}")
        defaults = {f.name: getattr(SECTIONS[sec], f.name) for f in fields(SECTIONS[sec])}
        if name not in defaults or isinstance(defaults[name], tuple):
            raise InputError(f"unknown config key {key!r}")
        values[sec][name] = _parse_value(text, defaults[name], key)
    out = {}
    for sec, obj in SECTIONS.items():
        try:
            out[sec] = replace(obj, **values[sec])
        except (ValueError, TypeError) as exc:
            raise InputError(f"config section {sec}: {exc}") from None
    return out


def stage_seed(seed: int, *stage) -> int:
    """Deterministic 32-bit seed for one named stage of a run."""
    words = [seed & 0xFFFFFFFF, seed >> 32]
    for s in stage:
        words.append(zlib.crc32(str(s).encode()) if isinstance(s, str) else int(s))
    return int(np.random.SeedSequence(words).generate_state(1)[0])


@dataclass
class Run:
    command: str
    seed: int
    strict: bool
    out: Path
    sections: dict
    inputs: dict = field(default_factory=dict)
    issues: list[str] = field(default_factory=list)

    def warn(self, msg: str) -> None:
        self.issues.append(msg)
        print(f"warning: {msg}", file=sys.stderr)

    def effective(self, extra: dict | None = None) -> dict[str, str]:
        cfg = {"command": self.command, "seed": str(self.seed)}
        for k, v in self.inputs.items():
            cfg["input." + k] = str(v)
        for sec in COMMAND_SECTIONS[self.command]:
            for k, v in asdict(self.sections[sec]).items():
                cfg[f"{sec}.{k}"] = repr(v)
        if extra:
            cfg.update({k: str(v) for k, v in extra.items()})
        return cfg

    def header(self, extra: dict | None = None) -> list[str]:
        return [f"{k} = {v}" for k, v in sorted(self.effective(extra).items())]

    def write_text(self, name: str, body: str, extra: dict | None = None) -> Path:
        path = self.out / name
        head = "".join(f"# {h}\n" for h in self.header(extra))
        path.write_text(head + body, encoding="utf-8")
        return path

    def write_tracks(self, name: str, tset: TrajectorySet, extra: dict | None = None) -> Path:
        path = self.out / name
        write_trajectories(path, tset, self.effective(extra))
        return path


def _require(paths: Sequence[Path]) -> None:
    for p in paths:
        if not Path(p).exists():
            raise InputError(f"input not found: {p}")


def _load_tracks(path) -> TrajectorySet:
    try:
        return read_trajectories(path)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read trajectories {path}: {exc}") from None


def _load_obstacles(path) -> list[Obstacle]:
    if path is None:
        return []
    try:
        return read_scene(path)[2]
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read scene {path}: {exc}") from None


# -- commands ---------------------------------------------------------------------------------

def cmd_calibrate_sensors(run: Run, args) -> None:
    _require([args.matches])
    run.inputs["matches"] = args.matches
    try:
        matches = read_point_matches(args.matches)
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from None
    expected = run.sections["calibrate"].sensors.split()
    try:
        wanted = sorted({int(s) for s in expected} | set(matches))
    except ValueError:
        raise InputError("calibrate.sensors must list integer ids") from None
    transforms, rows = {}, ["sensor_id n_matches rmse_m status"]
    for sid in wanted:
        ms = matches.get(sid, [])
        if not ms:
            run.warn(f"sensor {sid}: no point matches in {args.matches}")
            rows.append(f"{sid} 0 nan missing")
            continue
        try:
            tf = estimate_rigid_transform(ms)
        except (RankError, ValueError) as exc:
            run.warn(f"sensor {sid}: {exc}")
            rows.append(f"{sid} {len(ms)} nan degenerate")
            continue
        transforms[sid] = tf
        rows.append(f"{sid} {len(ms)} {calibration_rmse(tf, ms):.9f} ok")
    if not transforms:
        run.warn("no sensor could be calibrated")
    write_calibration(run.out / "calibration.txt", transforms, run.header())
    run.write_text("calibration_rmse.txt", "\n".join(rows) + "\n")


def cmd_track(run: Run, args) -> None:
    _require([args.frames, args.background, args.calibration])
    run.inputs.update(frames=args.frames, background=args.background, calibration=args.calibration)
    if not Path(args.frames).is_dir():
        raise InputError(f"{args.frames} is not a directory")
    try:
        bg = read_background(args.background)
        poses = read_calibration(args.calibration)
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from None
    intr: CameraIntrinsics = run.sections["camera"]
    det_cfg: DetectionConfig = run.sections["detection"]
    trk_cfg: TrackerConfig = run.sections["tracker"]
    log = []
    per_sensor: dict[int, list] = {}
    for path in sorted(Path(args.frames).glob("*.dpf")):
        try:
            fr = read_depth_frame(path)
        except (OSError, ValueError) as exc:
            run.warn(f"skipped corrupt frame {path.name}: {exc}")
            log.append(f"skipped {path.name} corrupt")
            continue
        if (fr.width, fr.height) != (intr.width, intr.height):
            run.warn(f"skipped frame {path.name}: size {fr.width}x{fr.height} does not match camera")
            log.append(f"skipped {path.name} size")
            continue
        per_sensor.setdefault(fr.sensor_id, []).append((fr.t, path.name, fr))
    counts = []
    for sid in sorted(per_sensor):
        if sid not in poses:
            run.warn(f"sensor {sid}: no calibration record, frames ignored")
            log.append(f"sensor {sid} uncalibrated")
            continue
        frames = sorted(per_sensor[sid], key=lambda x: (x[0], x[1]))
        seq, last = [], None
        for k, (t, name, fr) in enumerate(frames):
            if last is not None and t <= last:
                run.warn(f"skipped frame {name}: timestamp {t} not after {last}")
                log.append(f"skipped {name} order")
                continue
            last = t
            dets = detect_depth_frame(fr, intr, poses[sid], bg, det_cfg,
                                      seed=stage_seed(run.seed, "detect", sid, k))
            seq.append((t, dets))
        tset = track_sequence(seq, trk_cfg, f"s{sid}")
        run.write_tracks(f"tracks_s{sid}.csv", tset, {"sensor_id": sid})
        counts.append(f"sensor {sid} frames {len(seq)} trajectories {len(tset)}")
    run.write_text("track_log.txt", "\n".join(counts + log) + ("\n" if counts or log else ""))


def cmd_stitch(run: Run, args) -> None:
    _require(args.tracks)
    run.inputs["tracks"] = " ".join(args.tracks)
    sets = [_load_tracks(p) for p in args.tracks]
    cfg: StitchConfig = run.sections["stitch"]
    if len(sets) == 1:
        merged, report = sets[0], []
    else:
        merged, report = stitch_sensors(sets, cfg)
    run.write_tracks("merged.csv", merged)
    write_match_report(run.out / "match_report.txt", report, run.header())


def cmd_evaluate(run: Run, args) -> None:
    _require([args.auto, args.truth])
    run.inputs.update(auto=args.auto, truth=args.truth)
    auto, truth = _load_tracks(args.auto), _load_tracks(args.truth)
    if len(truth) == 0:
        run.warn("ground truth holds no trajectories")
    rep = evaluate(auto, truth, run.sections["eval"].max_dist)
    rep.write(run.out / "evaluation.txt", run.header())


def _split_tasks(run: Run, tset: TrajectorySet, obstacles, ocfg: ObjectiveConfig):
    cal, val = split_dataset(tset, ocfg.split_ratio, stage_seed(run.seed, "split"))
    segs = segments_array(obstacles)
    cal_tasks, rej = build_tasks(cal, segs, ocfg, context=tset)
    val_tasks, rej_v = build_tasks(val, segs, ocfg, context=tset)
    rej.update(rej_v)
    for tid in sorted(rej):
        if rej[tid] != "not a moving subject":
            run.warn(f"replay task {tid} rejected: {rej[tid]}")
    if not cal_tasks:
        raise InputError("no usable calibration subjects in the trajectory file")
    return cal_tasks, val_tasks


def cmd_fit(run: Run, args) -> None:
    _require([args.trajectories] + ([args.scene] if args.scene else []))
    run.inputs["trajectories"] = args.trajectories
    if args.scene:
        run.inputs["scene"] = args.scene
    tset = _load_tracks(args.trajectories)
    obstacles = _load_obstacles(args.scene)
    ocfg: ObjectiveConfig = run.sections["objective"]
    fs: FitSettings = run.sections["fit"]
    opt = OptimizerConfig(run.sections["ga"], run.sections["nm"], fs.fit_tau, fs.fit_anisotropy)
    cal_tasks, val_tasks = _split_tasks(run, tset, obstacles, ocfg)
    variants = ("A", "B", "C") if args.variant == "all" else (args.variant,)
    rows = ["variant s_cal s_val n_cal n_val parameters"]
    for v in variants:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            res = fit_model(cal_tasks, v, opt, stage_seed(run.seed, "fit", v), val_tasks or None,
                            base=run.sections["model"], cfg=ocfg)
        for w in caught:
            run.warn(f"variant {v}: {w.message}")
        path = run.out / f"fit_{v}.txt"
        path.write_text("".join(f"# {h}\n" for h in run.header({"variant": v})) + res.to_text(),
                        encoding="utf-8")
        p = res.params
        coeffs = " ".join(f"{n}={getattr(p, n):.6g}" for n in p.coeff_names)
        s_val = "nan" if res.s_val is None else f"{res.s_val:.6f}"
        rows.append(f"{v} {res.s_cal:.6f} {s_val} {res.n_cal} {res.n_val} {coeffs}")
    run.write_text("fit_summary.txt", "\n".join(rows) + "\n", {"variants": " ".join(variants)})


def _gate(values) -> np.ndarray:
    return np.asarray(values, dtype=float).reshape(2, 2)


def cmd_validate(run: Run, args) -> None:
    _require(args.fits + [args.trajectories] + ([args.scene] if args.scene else []))
    run.inputs.update(fits=" ".join(args.fits), trajectories=args.trajectories)
    if args.scene:
        run.inputs["scene"] = args.scene
    ga, gb = _gate(args.gate_a), _gate(args.gate_b)
    gates = {"gate_a": " ".join(f"{v:g}" for v in args.gate_a),
             "gate_b": " ".join(f"{v:g}" for v in args.gate_b)}
    tset = _load_tracks(args.trajectories)
    obstacles = _load_obstacles(args.scene)
    ocfg: ObjectiveConfig = run.sections["objective"]
    vs: ValidateSettings = run.sections["validate"]
    params = {}
    for f in args.fits:
        try:
            params[Path(f).stem] = read_fit(f)
        except (OSError, ValueError) as exc:
            raise InputError(str(exc)) from None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        measured = walking_time_cdf(tset, ga, gb)
    for w in caught:
        run.warn(f"measured: {w.message}")
    run.write_text("cdf_measured.txt", measured.table("measured"), gates)
    tasks, rej = build_tasks(tset, segments_array(obstacles), ocfg)
    lines = [f"measured n={measured.times.size} gate_misses={len(measured.excluded)}"]
    for label, p in params.items():
        sim = replay_trajectories(tasks, p, ocfg, vs.extra_time)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            cdf = walking_time_cdf(sim, ga, gb)
        for w in caught:
            run.warn(f"{label}: {w.message}")
        run.write_text(f"cdf_{label}.txt", cdf.table(label), dict(gates, model=label))
        head = f"model {label} variant={p.variant} n={cdf.times.size} gate_misses={len(cdf.excluded)}"
        if cdf.times.size == 0 or measured.times.size == 0:
            run.warn(f"{label}: KS test skipped, empty walking-time sample")
            lines.append(head + " ks=skipped")
            continue
        ks = ks_two_sample(measured.times, cdf.times)
        if ks.note:
            run.warn(f"{label}: {ks.note}")
        lines.append(head + f" D={ks.statistic:.6f} p={ks.pvalue:.6f} "
                     f"reject={ks.reject(vs.alpha)}")
    run.write_text("validation.txt", "\n".join(lines) + "\n", gates)


def _synthetic_matches(sensors, n: int, sigma: float, rng: np.random.Generator):
    out = {}
    for s in sensors:
        x, y = s.pose.translation[:2]
        world = np.column_stack([rng.uniform(x - 1.0, x + 1.0, n), rng.uniform(-1.0, 1.0, n),
                                 rng.uniform(0.0, 2.0, n)])
        cam = s.pose.inverse().apply(world) + rng.normal(0.0, sigma, (n, 3))
        out[s.sensor_id] = [PointMatch(Point3(*w), Point3(*c)) for w, c in zip(world, cam)]
    return out


def cmd_synth(run: Run, args) -> None:
    ss: SynthSettings = run.sections["synth"]
    seed = stage_seed(run.seed, "synth")
    if ss.kind == "corridor":
        try:
            scene = corridor_scene(ss.n_walkers, ss.duration, ss.dense, ss.noise, seed,
                                   run.sections["camera"], ss.n_sensors)
        except (RuntimeError, ValueError) as exc:
            raise InputError(f"scene cannot be generated: {exc}") from None
        frames = run.out / "frames"
        frames.mkdir(exist_ok=True)
        for s in scene.sensors:
            for k, t in enumerate(scene.frame_times):
                write_depth_frame(frames / f"s{s.sensor_id}_{k:06d}.dpf", render_depth(scene, s, t))
        per, _ = ground_truth(scene)
        for sid, tset in per.items():
            run.write_tracks(f"truth_s{sid}.csv", tset)
        run.write_tracks("truth.csv", covered_truth(scene))
        write_calibration(run.out / "calibration.txt", {s.sensor_id: s.pose for s in scene.sensors},
                          run.header())
        write_background(run.out / "background.txt", BackgroundModel())
        rng = np.random.default_rng(stage_seed(run.seed, "matches"))
        write_point_matches(run.out / "matches.txt",
                            _synthetic_matches(scene.sensors, ss.n_matches, ss.match_noise, rng))
        summary = [f"walkers {len(scene.walkers)}", f"sensors {len(scene.sensors)}",
                   f"frames_per_sensor {len(scene.frame_times)}", f"frame_rate {scene.frame_rate:g}"]
    elif ss.kind == "seam":
        a, b, pairs = seam_dataset(ss.n_pairs, ss.n_distractors, seed, noise=ss.noise)
        run.write_tracks("seam_a.csv", a)
        run.write_tracks("seam_b.csv", b)
        run.write_text("truth_pairs.txt", "id_a id_b\n" + "".join(f"{p} {q}\n" for p, q in pairs))
        summary = [f"pairs {len(pairs)}", f"fragments_a {len(a)}", f"fragments_b {len(b)}"]
    elif ss.kind == "crowd":
        params = replace(run.sections["model"], variant=ss.variant)
        spec = CorridorSpec(n_walkers=ss.n_walkers, spawn_interval=3.0, static_person=(5.0, 0.0),
                            spawn_clearance=3.0, goal_overshoot=0.0)
        res = static_obstacle_experiment(ss.n_walkers, params, seed, spec, snap_to_goal=True,
                                         walls=ss.walls)
        tset = add_position_noise(res.trajectories, ss.noise, stage_seed(run.seed, "noise"))
        run.write_tracks("trajectories.csv", tset)
        write_scene(run.out / "scene.txt", [], res.obstacles)
        summary = [f"walkers {len(tset) - 1}", f"truncated {len(res.truncated)}"]
        for tid in res.truncated:
            run.warn(f"walker {tid} did not reach its goal")
    else:
        raise InputError(f"unknown synth.kind {ss.kind!r}; use corridor, seam or crowd")
    run.write_text("synth_summary.txt", "\n".join(summary) + "\n")


COMMANDS = {
    "calibrate-sensors": cmd_calibrate_sensors,
    "track": cmd_track,
    "stitch": cmd_stitch,
    "evaluate": cmd_evaluate,
    "fit": cmd_fit,
    "validate": cmd_validate,
    "synth": cmd_synth,
}


# -- entry point --------------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat 'section.key = value' file")
    common.add_argument("--seed", type=_seed, default=0)
    common.add_argument("--strict", action="store_true",
                        help="exit 2 when degenerate data produced warnings")
    common.add_argument("--out", default=".", help="output directory")
    p = _Parser(prog="depthcrowd", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    c = sub.add_parser("calibrate-sensors", parents=[common], help="estimate sensor poses")
    c.add_argument("matches")
    c = sub.add_parser("track", parents=[common], help="detect and track per sensor")
    c.add_argument("frames", help="directory of .dpf depth frames")
    c.add_argument("--background", required=True)
    c.add_argument("--calibration", required=True)
    c = sub.add_parser("stitch", parents=[common], help="merge per-sensor trajectories")
    c.add_argument("tracks", nargs="+", help="per-sensor files in sensor order")
    c = sub.add_parser("evaluate", parents=[common], help="MOTP and PDR against ground truth")
    c.add_argument("auto")
    c.add_argument("truth")
    c = sub.add_parser("fit", parents=[common], help="calibrate Social Force variants")
    c.add_argument("trajectories")
    c.add_argument("--variant", choices=("A", "B", "C", "all"), default="all")
    c.add_argument("--scene", help="scene file whose obstacle records are used")
    c = sub.add_parser("validate", parents=[common], help="walking-time CDFs and KS tests")
    c.add_argument("fits", nargs="+", help="fit result files")
    c.add_argument("--trajectories", required=True)
    c.add_argument("--scene")
    c.add_argument("--gate-a", nargs=4, type=float, required=True, metavar=("X0", "Y0", "X1", "Y1"))
    c.add_argument("--gate-b", nargs=4, type=float, required=True, metavar=("X0", "Y0", "X1", "Y1"))
    sub.add_parser("synth", parents=[common], help="synthetic frames, truth and datasets")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        raw = read_config(args.config) if args.config else {}
        sections = build_sections(raw)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        run = Run(args.command, args.seed, args.strict, out, sections)
        if args.config:
            run.inputs["config"] = args.config
        COMMANDS[args.command](run, args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if run.strict and run.issues:
        print(f"{len(run.issues)} warning(s) under --strict", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
