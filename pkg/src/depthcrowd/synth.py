"""Synthetic ground truth: simulated walkers rendered through known sensors.

Walker paths come from the Social Force simulation, bodies are a head
sphere resting on a torso capsule, and depth frames are produced by casting
one ray per pixel of a pinhole camera. The generated truth is what the
tracking, stitching and calibration modules are tested against.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import Trajectory, TrajectorySet
from .geometry import CameraIntrinsics, DepthFrame, RigidTransform, top_down_pose
from .socialforce import ModelParams, Obstacle, SceneState, integrate, scene_forces, segments_array

HEIGHT_RANGE = (1.4, 2.1)


# -- crowd simulation -----------------------------------------------------------------

@dataclass(frozen=True)
class Spawn:
    t: float
    start: tuple[float, float]
    goal: tuple[float, float]
    desired_speed: float
    pinned: bool = False
    exit_distance: float = 0.0


@dataclass(frozen=True)
class CorridorSpec:
    """Straight corridor along x with walls at ``y = +-width/2``."""

    x_start: float = 0.0
    length: float = 10.0
    width: float = 3.0
    n_walkers: int = 60
    spawn_interval: float = 1.0
    bidirectional: bool = True
    speed_mean: float = 1.34
    speed_sd: float = 0.25
    speed_min: float = 0.7
    speed_max: float = 2.0
    lateral_range: float = 0.9
    static_person: tuple[float, float] | None = None
    spawn_clearance: float = 1.0
    keep_right: bool = False
    goal_overshoot: float = 0.5

    @property
    def x_end(self) -> float:
        return self.x_start + self.length

    def walls(self, margin: float = 2.0) -> list[Obstacle]:
        h = self.width / 2.0
        x0, x1 = self.x_start - margin, self.x_end + margin
        return [Obstacle((x0, -h), (x1, -h)), Obstacle((x0, h), (x1, h))]


def corridor_spawns(spec: CorridorSpec, rng: np.random.Generator) -> list[Spawn]:
    """Poisson arrivals at either corridor end, each heading just past the opposite end."""
    out = []
    t = 0.0
    for _ in range(spec.n_walkers):
        forward = (not spec.bidirectional) or rng.random() < 0.5
        lo, hi = -spec.lateral_range, spec.lateral_range
        if spec.keep_right:
            lo, hi = (lo, -0.1) if forward else (0.1, hi)
        y0 = rng.uniform(lo, hi)
        y1 = rng.uniform(lo, hi)
        v0 = float(np.clip(rng.normal(spec.speed_mean, spec.speed_sd), spec.speed_min, spec.speed_max))
        a, b = ((spec.x_start, spec.x_end + spec.goal_overshoot) if forward
                else (spec.x_end, spec.x_start - spec.goal_overshoot))
        out.append(Spawn(t, (a, y0), (b, y1), v0, exit_distance=spec.goal_overshoot))
        t += rng.exponential(spec.spawn_interval)
    return out


@dataclass
class CrowdRun:
    trajectories: TrajectorySet
    obstacles: list[Obstacle]
    truncated: list[str] = field(default_factory=list)
    desired_speeds: dict[str, float] = field(default_factory=dict)


def simulate_crowd(spawns: Sequence[Spawn], obstacles: Sequence[Obstacle], params: ModelParams,
                   t_end: float | None = None, arrive_tol: float = 0.05,
                   spawn_clearance: float = 1.0, max_walk_factor: float = 4.0,
                   radius: float | None = None, tau: float | None = None,
                   ids: Sequence[str] | None = None, snap_to_goal: bool = False) -> CrowdRun:
    """Simulate agents entering at their spawn times until they reach their goals.

    A spawn waits while another agent is within ``spawn_clearance`` of its
    start. Each step records positions, computes forces among all present
    agents, then advances the unpinned ones. An agent within ``arrive_tol``
    (or one step length) of its goal, or within its spawn's
    ``exit_distance`` of the goal along the start-to-goal direction, is
    removed after that step's record; with ``snap_to_goal`` that record is
    placed on the goal itself. Pinned agents stand
    still for the whole run and still repel others.
    """
    n = len(spawns)
    ids = list(ids) if ids is not None else [f"p{i:04d}" for i in range(n)]
    r = params.radius if radius is None else radius
    tau = params.tau if tau is None else tau
    dt = params.dt
    segs = segments_array(list(obstacles))
    start = np.array([s.start for s in spawns], dtype=float).reshape(n, 2)
    goal = np.array([s.goal for s in spawns], dtype=float).reshape(n, 2)
    v0 = np.array([s.desired_speed for s in spawns], dtype=float)
    pinned = np.array([s.pinned for s in spawns], dtype=bool)
    t_spawn = np.array([s.t for s in spawns], dtype=float)
    exit_d = np.array([s.exit_distance for s in spawns], dtype=float)
    straight = np.linalg.norm(goal - start, axis=1)
    axis = (goal - start) / np.maximum(straight, 1e-12)[:, None]
    walkers_end = t_spawn + max_walk_factor * straight / v0 + 10.0
    if t_end is None:
        t_end = float(np.max(np.where(pinned, 0.0, walkers_end), initial=0.0))
    state = SceneState(0.0, start.copy(), np.zeros((n, 2)), v0, goal, np.full(n, r), np.full(n, tau),
                       np.zeros(n, dtype=bool), ids)
    status = np.zeros(n, dtype=int)  # 0 waiting, 1 present, 2 gone
    rec_t: list[list[float]] = [[] for _ in range(n)]
    rec_p: list[list[np.ndarray]] = [[] for _ in range(n)]
    truncated = []
    n_steps = int(np.floor(t_end / dt + 1e-9)) + 1
    for k in range(n_steps):
        t = k * dt
        for i in np.flatnonzero((status == 0) & (t_spawn <= t + 1e-9)):
            present = np.flatnonzero(status == 1)
            if not pinned[i] and present.size and \
                    np.min(np.linalg.norm(state.pos[present] - start[i], axis=1)) < spawn_clearance:
                continue
            status[i] = 1
            state.pos[i] = start[i]
            if pinned[i]:
                state.vel[i] = 0.0
            else:
                e = goal[i] - start[i]
                state.vel[i] = v0[i] * e / max(np.linalg.norm(e), 1e-12)
        present = status == 1
        if not present.any():
            if (status == 0).any():
                continue
            break
        for i in np.flatnonzero(present):
            rec_t[i].append(t)
            rec_p[i].append(state.pos[i].copy())
        tol = np.maximum(arrive_tol, np.linalg.norm(state.vel, axis=1) * dt)
        ahead = np.einsum("ij,ij->i", goal - state.pos, axis)
        at_goal = present & ~pinned & (np.linalg.norm(goal - state.pos, axis=1) <= tol)
        arrived = at_goal | (present & ~pinned & (exit_d > 0) & (ahead <= exit_d))
        if snap_to_goal:
            for i in np.flatnonzero(at_goal):
                rec_p[i][-1] = goal[i].copy()
        late = present & ~pinned & (t >= walkers_end)
        state.active = present
        f = scene_forces(state, segs, params)
        move = present & ~pinned & ~arrived & ~late
        if move.any():
            state.pos[move], state.vel[move] = integrate(state.pos[move], state.vel[move], f[move],
                                                         v0[move], params)
        status[arrived | late] = 2
        truncated += [ids[i] for i in np.flatnonzero(late & ~arrived)]
    trajs = []
    for i in range(n):
        if len(rec_t[i]) >= 2:
            xy = np.array(rec_p[i])
            trajs.append(Trajectory(ids[i], rec_t[i], np.column_stack([xy, np.zeros(len(xy))])))
    meta = {"synth.variant": params.variant, "synth.dt": repr(dt)}
    speeds = {ids[i]: float(v0[i]) for i in range(n) if not pinned[i]}
    return CrowdRun(TrajectorySet(trajs, frame_rate=1.0 / dt, metadata=meta), list(obstacles), truncated,
                    speeds)


def static_obstacle_experiment(n_walkers: int = 60, params: ModelParams | None = None, seed: int = 0,
                               spec: CorridorSpec | None = None, snap_to_goal: bool = False,
                               walls: bool = True) -> CrowdRun:
    """Bidirectional corridor flow around a person standing at the corridor centre.

    The standing person is returned as a stationary trajectory with id
    ``static``. With ``walls`` the corridor walls are the obstacles;
    otherwise the area is open.
    """
    params = params or ModelParams()
    spec = spec or CorridorSpec(n_walkers=n_walkers, static_person=(5.0, 0.0))
    rng = np.random.default_rng(seed)
    spawns = corridor_spawns(spec, rng)
    ids = [f"p{i:04d}" for i in range(len(spawns))]
    if spec.static_person is not None:
        spawns.append(Spawn(0.0, spec.static_person, spec.static_person, 1.0, pinned=True))
        ids.append("static")
    walkers_end = max(s.t + 4.0 * (spec.length + spec.goal_overshoot) / s.desired_speed + 10.0
                      for s in spawns if not s.pinned)
    run = simulate_crowd(spawns, spec.walls() if walls else [], params,
                         t_end=None if spec.static_person is None
                         else walkers_end, spawn_clearance=spec.spawn_clearance, ids=ids,
                         snap_to_goal=snap_to_goal)
    if spec.static_person is not None:
        # Trim the standing person to the span in which anybody walks.
        walkers = [tr for tr in run.trajectories if tr.id != "static"]
        t1 = max(tr.end_time for tr in walkers)
        st = run.trajectories.by_id()["static"]
        keep = st.t <= t1 + 1e-9
        trimmed = Trajectory("static", st.t[keep], st.xyz[keep])
        run.trajectories = TrajectorySet(walkers + [trimmed], run.trajectories.frame_rate,
                                         run.trajectories.metadata)
    return run


def add_position_noise(tset: TrajectorySet, sigma: float, seed: int = 0) -> TrajectorySet:
    """Copy of ``tset`` with isotropic Gaussian noise on x and y."""
    rng = np.random.default_rng(seed)
    out = []
    for tr in tset:
        xyz = tr.xyz.copy()
        xyz[:, :2] += rng.normal(0.0, sigma, size=(len(tr), 2))
        out.append(Trajectory(tr.id, tr.t, xyz))
    return TrajectorySet(out, tset.frame_rate, tset.metadata)


def contact_free_ids(tset: TrajectorySet, contact: float) -> list[str]:
    """Ids of trajectories that never come within ``contact`` of any other at a shared timestamp."""
    trs = list(tset)
    bad: set[str] = set()
    for i, a in enumerate(trs):
        for b in trs[i + 1:]:
            common, ia, ib = np.intersect1d(np.round(a.t * 1e6).astype(np.int64),
                                            np.round(b.t * 1e6).astype(np.int64), return_indices=True)
            if common.size and np.min(np.linalg.norm(a.xy[ia] - b.xy[ib], axis=1)) < contact:
                bad.update((a.id, b.id))
    return [tr.id for tr in trs if tr.id not in bad]


def replay_dataset(params: ModelParams, n_walkers: int = 60, seed: int = 0, noise: float = 0.01,
                   spec: CorridorSpec | None = None) -> CrowdRun:
    """Keep-right bidirectional corridor flow for calibration checks.

    Keeping to lanes avoids the body overlaps that weak repulsion allows in
    head-on encounters. Goals sit on the corridor ends and each walk's last
    sample is placed on its goal, as replay assumes. Recorded positions get ``noise`` metres
    of jitter; the true desired speeds are kept in ``desired_speeds``.
    """
    spec = spec or CorridorSpec(n_walkers=n_walkers, spawn_interval=1.0, keep_right=True,
                                goal_overshoot=0.0)
    run = static_obstacle_experiment(n_walkers, params, seed, spec, snap_to_goal=True)
    if noise > 0:
        run.trajectories = add_position_noise(run.trajectories, noise, seed + 1)
    return run


# -- bodies and sensors -----------------------------------------------------------------

@dataclass(frozen=True)
class WalkerSpec:
    """Ground-truth path (x, y over time) and body of one walker.

    The body is a head sphere of ``head_radius`` touching ``height`` on top
    of a torso capsule of radius ``shoulder_width / 2`` whose top lies
    ``neck_drop`` below the top of the head.
    """

    id: str
    path: Trajectory
    height: float = 1.75
    shoulder_width: float = 0.45
    head_radius: float = 0.1
    neck_drop: float = 0.25

    def __post_init__(self):
        if not HEIGHT_RANGE[0] <= self.height <= HEIGHT_RANGE[1]:
            raise ValueError(f"walker height {self.height} outside {HEIGHT_RANGE}")

    @property
    def head_center_z(self) -> float:
        return self.height - self.head_radius

    @property
    def torso_top(self) -> float:
        return self.height - self.neck_drop

    def present(self, t: float) -> bool:
        return self.path.start_time - 1e-9 <= t <= self.path.end_time + 1e-9


@dataclass(frozen=True)
class SensorSpec:
    sensor_id: int
    pose: RigidTransform  # camera frame to world frame
    intrinsics: CameraIntrinsics


@dataclass(frozen=True)
class SyntheticScene:
    walkers: tuple[WalkerSpec, ...]
    sensors: tuple[SensorSpec, ...]
    noise_sigma: float = 0.01
    seed: int = 0
    frame_rate: float = 30.0
    duration: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, "walkers", tuple(self.walkers))
        object.__setattr__(self, "sensors", tuple(self.sensors))
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    @property
    def frame_times(self) -> np.ndarray:
        n = int(round(self.duration * self.frame_rate))
        return np.arange(n) / self.frame_rate

    def sensor(self, sensor_id: int) -> SensorSpec:
        for s in self.sensors:
            if s.sensor_id == sensor_id:
                return s
        raise KeyError(f"no sensor {sensor_id}")


def default_sensors(n: int = 3, spacing: float = 2.8, height: float = 4.5,
                    intrinsics: CameraIntrinsics | None = None, x0: float = 0.0) -> list[SensorSpec]:
    """Top-down sensors in a row along x, slightly overlapping at head height."""
    intr = intrinsics or CameraIntrinsics()
    return [SensorSpec(i, top_down_pose(x0 + i * spacing, 0.0, height), intr) for i in range(n)]


def _pixel_rays(sensor: SensorSpec) -> np.ndarray:
    """World-frame ray directions (h, w, 3) scaled so the camera-z component is 1."""
    intr = sensor.intrinsics
    u = np.arange(intr.width)
    v = np.arange(intr.height)
    uu, vv = np.meshgrid(u, v)
    cam = np.stack([(uu - intr.cx) / intr.focal_length_px, (vv - intr.cy) / intr.focal_length_px,
                    np.ones_like(uu, dtype=float)], axis=-1)
    return cam @ sensor.pose.rotation.T


def project(sensor: SensorSpec, points) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates (N, 2) and camera depth (N,) of world points."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    cam = (p - sensor.pose.translation) @ sensor.pose.rotation
    intr = sensor.intrinsics
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.focal_length_px * cam[:, 0] / z + intr.cx
        v = intr.focal_length_px * cam[:, 1] / z + intr.cy
    return np.column_stack([u, v]), z


def _ray_sphere(o: np.ndarray, d: np.ndarray, c: np.ndarray, r: float) -> np.ndarray:
    oc = o - c
    a = np.einsum("...i,...i->...", d, d)
    b = 2.0 * (d @ oc)
    cc = oc @ oc - r * r
    disc = b * b - 4 * a * cc
    s = (-b - np.sqrt(np.maximum(disc, 0.0))) / (2 * a)
    return np.where((disc >= 0) & (s > 0), s, np.inf)


def _ray_capsule_top(o, d, cxy, z0, z1, r) -> np.ndarray:
    """Nearest hit on a vertical cylinder ``z0..z1`` of radius ``r`` capped by a sphere at ``z1``."""
    oxy = o[:2] - cxy
    dxy = d[..., :2]
    a = np.einsum("...i,...i->...", dxy, dxy)
    b = 2.0 * (dxy @ oxy)
    cc = oxy @ oxy - r * r
    disc = b * b - 4 * a * cc
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (-b - np.sqrt(np.maximum(disc, 0.0))) / (2 * a)
    z = o[2] + s * d[..., 2]
    s_cyl = np.where((disc >= 0) & (a > 0) & (s > 0) & (z >= z0) & (z <= z1), s, np.inf)
    s_cap = _ray_sphere(o, d, np.array([cxy[0], cxy[1], z1]), r)
    return np.minimum(s_cyl, s_cap)


_RAY_CACHE: dict[tuple, np.ndarray] = {}


def _cached_rays(sensor: SensorSpec) -> np.ndarray:
    key = (sensor.sensor_id, sensor.pose.rotation.tobytes(), sensor.intrinsics)
    if key not in _RAY_CACHE:
        if len(_RAY_CACHE) > 16:
            _RAY_CACHE.clear()
        _RAY_CACHE[key] = _pixel_rays(sensor)
    return _RAY_CACHE[key]


def _frame_index(scene: SyntheticScene, t: float) -> int:
    return int(round(t * scene.frame_rate))


def render_depth(scene: SyntheticScene, sensor: SensorSpec | int, t: float) -> DepthFrame:
    """Depth frame of ``sensor`` at time ``t``; 0 marks invalid pixels.

    Only the pixels inside each walker's projected bounding box are ray
    cast. Noise is seeded by (scene seed, sensor id, frame index).
    """
    if not isinstance(sensor, SensorSpec):
        sensor = scene.sensor(sensor)
    intr = sensor.intrinsics
    depth = np.full((intr.height, intr.width), np.inf)
    rays = _cached_rays(sensor)
    o = sensor.pose.translation
    for w in scene.walkers:
        if not w.present(t):
            continue
        xy = w.path.position_at(t)[:2]
        R = max(w.shoulder_width / 2.0, w.head_radius)
        corners = np.array([[xy[0] + sx * R, xy[1] + sy * R, z]
                            for sx in (-1, 1) for sy in (-1, 1) for z in (0.0, w.height)])
        uv, zc = project(sensor, corners)
        if np.any(zc <= 0):
            continue
        u0 = max(int(np.floor(uv[:, 0].min())) - 1, 0)
        u1 = min(int(np.ceil(uv[:, 0].max())) + 2, intr.width)
        v0 = max(int(np.floor(uv[:, 1].min())) - 1, 0)
        v1 = min(int(np.ceil(uv[:, 1].max())) + 2, intr.height)
        if u0 >= u1 or v0 >= v1:
            continue
        d = rays[v0:v1, u0:u1]
        s = _ray_sphere(o, d, np.array([xy[0], xy[1], w.head_center_z]), w.head_radius)
        torso_r = w.shoulder_width / 2.0
        s = np.minimum(s, _ray_capsule_top(o, d, xy, 0.0, w.torso_top - torso_r, torso_r))
        np.minimum(depth[v0:v1, u0:u1], s, out=depth[v0:v1, u0:u1])
    hit = np.isfinite(depth)
    out = np.zeros_like(depth)
    if hit.any():
        vals = depth[hit]
        if scene.noise_sigma > 0:
            rng = np.random.default_rng([scene.seed, sensor.sensor_id, _frame_index(scene, t)])
            vals = vals + rng.normal(0.0, scene.noise_sigma, vals.size)
        vals = np.where(vals <= intr.depth_range_max, vals, 0.0)
        out[hit] = vals
    return DepthFrame(sensor.sensor_id, float(t), out.astype(np.float32).astype(float))


def in_view(sensor: SensorSpec, points) -> np.ndarray:
    """Whether world points project inside the image and within depth range."""
    uv, z = project(sensor, points)
    intr = sensor.intrinsics
    return ((z > 0) & (z <= intr.depth_range_max) & (uv[:, 0] >= 0) & (uv[:, 0] < intr.width)
            & (uv[:, 1] >= 0) & (uv[:, 1] < intr.height))


def body_probe_points(w: WalkerSpec, xy, cutoff_low: float = 1.5, n_ring: int = 12) -> np.ndarray:
    """Points outlining the part of the body above ``cutoff_low``.

    The apex, a ring around the head, and (when the shoulders reach the
    band) a ring around the torso top; a walker counts as fully in view
    when all of them project inside the image.
    """
    ang = np.linspace(0.0, 2 * np.pi, n_ring, endpoint=False)
    ring = np.column_stack([np.cos(ang), np.sin(ang)])
    pts = [np.array([[xy[0], xy[1], w.height]])]
    zc = w.head_center_z
    z_head = max(zc, cutoff_low)
    r_head = np.sqrt(max(w.head_radius ** 2 - (z_head - zc) ** 2, 0.0))
    pts.append(np.column_stack([xy + r_head * ring, np.full(n_ring, z_head)]))
    R = w.shoulder_width / 2.0
    if w.torso_top > cutoff_low:
        zt = max(w.torso_top - R, cutoff_low)
        rt = np.sqrt(max(R ** 2 - (zt - (w.torso_top - R)) ** 2, 0.0))
        pts.append(np.column_stack([xy + rt * ring, np.full(n_ring, zt)]))
    return np.vstack(pts)


def fully_in_view(sensor: SensorSpec, w: WalkerSpec, xy, cutoff_low: float = 1.5) -> bool:
    return bool(np.all(in_view(sensor, body_probe_points(w, xy, cutoff_low))))


def _frame_sampled(w: WalkerSpec, times: np.ndarray) -> Trajectory | None:
    sel = times[(times >= w.path.start_time - 1e-9) & (times <= w.path.end_time + 1e-9)]
    if sel.size == 0:
        return None
    xy = np.array([w.path.position_at(t)[:2] for t in sel])
    return Trajectory(w.id, sel, np.column_stack([xy, np.full(len(sel), w.height)]))


def visibility(scene: SyntheticScene, w: WalkerSpec, tr: Trajectory, sensor: SensorSpec,
               cutoff_low: float = 1.5) -> np.ndarray:
    """Per-sample flag: the walker's whole upper body is inside the sensor's view."""
    return np.array([fully_in_view(sensor, w, xy, cutoff_low) for xy in tr.xy], dtype=bool)


def ground_truth(scene: SyntheticScene, min_points: int = 3, cutoff_low: float = 1.5):
    """Head-top trajectories at frame times: per sensor (clipped) and global.

    A walker counts as seen by a sensor while the part of its body above
    ``cutoff_low`` lies entirely inside the image (see
    :func:`fully_in_view`). Each maximal visible run of at least
    ``min_points`` frames becomes one per-sensor truth trajectory; runs
    after the first get a ``#k`` suffix.
    """
    times = scene.frame_times
    glob, per = [], {s.sensor_id: [] for s in scene.sensors}
    for w in scene.walkers:
        tr = _frame_sampled(w, times)
        if tr is None:
            continue
        glob.append(tr)
        for s in scene.sensors:
            vis = visibility(scene, w, tr, s, cutoff_low)
            runs = _runs(vis)
            k = 0
            for a, b in runs:
                if b - a < min_points:
                    continue
                name = w.id if k == 0 else f"{w.id}#{k}"
                per[s.sensor_id].append(Trajectory(name, tr.t[a:b], tr.xyz[a:b]))
                k += 1
    meta = {"synth.seed": repr(scene.seed), "synth.noise_sigma": repr(scene.noise_sigma)}
    per_sets = {sid: TrajectorySet(v, scene.frame_rate, meta) for sid, v in per.items()}
    return per_sets, TrajectorySet(glob, scene.frame_rate, meta)


def covered_truth(scene: SyntheticScene, min_points: int = 3, cutoff_low: float = 1.5) -> TrajectorySet:
    """Global truth trimmed to the span between a walker's first and last full view."""
    times = scene.frame_times
    out = []
    for w in scene.walkers:
        tr = _frame_sampled(w, times)
        if tr is None:
            continue
        vis = np.zeros(len(tr), dtype=bool)
        for s in scene.sensors:
            vis |= visibility(scene, w, tr, s, cutoff_low)
        idx = np.flatnonzero(vis)
        if idx.size >= min_points:
            a, b = idx[0], idx[-1] + 1
            out.append(Trajectory(w.id, tr.t[a:b], tr.xyz[a:b]))
    return TrajectorySet(out, scene.frame_rate, {"synth.seed": repr(scene.seed)})


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    m = np.concatenate([[False], np.asarray(mask, dtype=bool), [False]])
    edges = np.flatnonzero(m[1:] != m[:-1])
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


# -- ready-made scenes --------------------------------------------------------------------

# Stiffer, wider bodies than the calibration defaults so rendered walkers never interpenetrate.
SCENE_PARAMS = ModelParams(variant="A", a=6.0, b=0.3, radius=0.3)
# Softer repulsion keeps a packed platoon near one person per square metre.
DENSE_PARAMS = ModelParams(variant="A", a=2.0, b=0.2, radius=0.3)

def _bodies(rng: np.random.Generator, n: int):
    heights = np.clip(rng.normal(1.76, 0.07, n), 1.6, 2.0)
    shoulders = np.clip(rng.normal(0.45, 0.03, n), 0.38, 0.52)
    return heights, shoulders


def _flows_freely(run: CrowdRun, spawns: Sequence[Spawn], duration: float,
                  slack: float = 1.6) -> bool:
    """True when every walker finishes within the run and near its free-walk time."""
    if run.truncated or len(run.trajectories) != len(spawns):
        return False
    for tr, sp in zip(run.trajectories, spawns):
        free = np.linalg.norm(np.subtract(sp.goal, sp.start)) / sp.desired_speed
        if tr.end_time > duration or tr.duration > slack * free + 1.0:
            return False
    return True


def corridor_scene(n_walkers: int = 20, duration: float = 60.0, dense: bool = False,
                   noise_sigma: float = 0.01, seed: int = 0, intrinsics: CameraIntrinsics | None = None,
                   n_sensors: int = 3, spacing: float = 2.8, width: float = 2.4,
                   params: ModelParams | None = None, max_redraws: int = 50,
                   headway: float = 1.2, columns: int = 3, max_density: float = 0.5) -> SyntheticScene:
    """Walkers crossing a row of top-down sensors.

    The sparse setting spreads bidirectional arrivals over the run. The
    dense setting releases a platoon ``columns`` abreast with ``headway``
    metres between rows; 30 walkers give about one person per square metre.
    """
    rng = np.random.default_rng(seed)
    params = params or (DENSE_PARAMS if dense else SCENE_PARAMS)
    intr = intrinsics or CameraIntrinsics().scaled(2)
    sensors = default_sensors(n_sensors, spacing, intrinsics=intr)
    x_lo = -spacing * 0.6 - 1.5
    x_hi = spacing * (n_sensors - 1) + spacing * 0.6 + 1.5
    spec = CorridorSpec(x_start=x_lo, length=x_hi - x_lo, width=width, n_walkers=n_walkers,
                        lateral_range=width / 2 - 0.4, keep_right=True)
    if dense:
        spawns = []
        lanes = np.linspace(-1.0, 1.0, columns) * (width / 2 - 0.45) if columns > 1 else np.zeros(1)
        for i in range(n_walkers):
            row, col = divmod(i, columns)
            y = lanes[col] + rng.uniform(-0.05, 0.05)
            x = x_lo - headway * row + rng.uniform(-0.05, 0.05)
            v0 = float(np.clip(rng.normal(1.25, 0.08), 1.0, 1.5))
            spawns.append(Spawn(0.0, (x, y), (x_hi + 1.0, y), v0, exit_distance=1.0))
        run = simulate_crowd(spawns, spec.walls(margin=12.0), params, spawn_clearance=0.0)
    else:
        travel = spec.length / spec.speed_mean
        window = max(duration - 1.8 * travel, 1.0)
        spec = replace(spec, spawn_interval=window / max(n_walkers, 1))
        # Counterflow in a narrow corridor can gridlock; such draws are rejected.
        for _ in range(max_redraws):
            spawns = corridor_spawns(spec, rng)
            last = max(sp.t for sp in spawns)
            if last > window:
                spawns = [replace(sp, t=sp.t * window / last) for sp in spawns]
            run = simulate_crowd(spawns, spec.walls(), params, spawn_clearance=spec.spawn_clearance)
            if _flows_freely(run, spawns, duration) and \
                    path_peak_density(list(run.trajectories), sensors, width) <= max_density:
                break
        else:
            raise RuntimeError("no free-flowing corridor draw found; lower n_walkers or widen")
    heights, shoulders = _bodies(rng, len(run.trajectories))
    walkers = []
    for tr, h, s in zip(run.trajectories, heights, shoulders):
        walkers.append(WalkerSpec(tr.id, tr, float(h), float(s)))
    return SyntheticScene(tuple(walkers), tuple(sensors), noise_sigma, seed, 30.0, duration)


def footprint_x(sensors: Sequence[SensorSpec], head_z: float = 1.7) -> tuple[float, float]:
    """x range seen by any sensor at head height."""
    xs = []
    for sn in sensors:
        depth = sn.pose.translation[2] - head_z
        half = 0.5 * sn.intrinsics.width * depth / sn.intrinsics.focal_length_px
        xs += [sn.pose.translation[0] - half, sn.pose.translation[0] + half]
    return min(xs), max(xs)


def path_peak_density(paths: Sequence[Trajectory], sensors: Sequence[SensorSpec],
                      width: float, step: float = 0.1) -> float:
    """Largest number of walkers per square metre inside the sensors' footprint."""
    x_lo, x_hi = footprint_x(sensors)
    t0 = min(p.start_time for p in paths)
    t1 = max(p.end_time for p in paths)
    best = 0
    for t in np.arange(t0, t1 + step, step):
        n = 0
        for p in paths:
            if p.start_time <= t <= p.end_time:
                n += x_lo <= p.position_at(t)[0] <= x_hi
        best = max(best, n)
    return best / ((x_hi - x_lo) * width)


def peak_density(scene: SyntheticScene, width: float = 2.4) -> float:
    """Peak walker density (per square metre) over the sensors' joint footprint."""
    return path_peak_density([w.path for w in scene.walkers], scene.sensors, width)


def seam_dataset(n_pairs: int = 20, n_distractors: int = 5, seed: int = 0, overlap: float = 0.6,
                 noise: float = 0.01, headway: float = 8.0):
    """Fragments of walkers crossing the seam ``x = 0`` between sensors A and B.

    Each walker yields one fragment per side, overlapping by ``overlap``
    metres around the seam. Distractors are short single-sensor fragments
    with no partner. Returns ``(set_a, set_b, truth_pairs)`` with
    ``truth_pairs`` as ``(id_a, id_b)`` tuples.
    """
    rng = np.random.default_rng(seed)
    dt = 1.0 / 30.0
    a_tr, b_tr, truth = [], [], []
    names_a = rng.permutation(n_pairs + n_distractors)
    names_b = rng.permutation(n_pairs + n_distractors)
    half = overlap / 2.0
    t_cross = 2.0
    for i in range(n_pairs):
        t_cross += headway * rng.uniform(0.6, 1.4)
        forward = rng.random() < 0.5
        v = float(np.clip(rng.normal(1.34, 0.25), 0.8, 2.0)) * (1 if forward else -1)
        y0 = rng.uniform(-0.8, 0.8)
        drift = rng.normal(0.0, 0.05)
        height = float(np.clip(rng.normal(1.76, 0.07), 1.6, 2.0))
        x_from, x_to = (-3.0, 3.0) if forward else (3.0, -3.0)
        t0 = t_cross - abs(x_from) / abs(v)
        n = int(np.floor((abs(x_to - x_from) / abs(v)) / dt)) + 1
        t = np.round(t0 / dt) * dt + np.arange(n) * dt
        x = v * (t - t_cross)
        y = y0 + drift * (t - t_cross)
        in_a = x <= half
        in_b = x >= -half
        pa, pb = f"a-{names_a[i]:03d}", f"b-{names_b[i]:03d}"
        for mask, name, bucket, bias in ((in_a, pa, a_tr, 0.01), (in_b, pb, b_tr, -0.01)):
            xs = x[mask] + rng.normal(0, noise, mask.sum())
            ys = y[mask] + rng.normal(0, noise, mask.sum())
            zs = height + bias + rng.normal(0, noise, mask.sum())
            bucket.append(Trajectory(name, t[mask], np.column_stack([xs, ys, zs])))
        truth.append((pa, pb) if forward else (pb, pa))
    t_hi = t_cross + 2.0
    for k in range(n_distractors):
        i = n_pairs + k
        side_a = k % 2 == 0
        t0 = rng.uniform(2.0, t_hi)
        n = int(rng.integers(15, 45))
        t = np.round(t0 / dt) * dt + np.arange(n) * dt
        x0 = rng.uniform(-2.5, -1.0) if side_a else rng.uniform(1.0, 2.5)
        vx = rng.normal(0.0, 0.3)
        xy = np.column_stack([x0 + vx * (t - t[0]), np.full(n, rng.uniform(-0.8, 0.8))])
        z = np.full(n, float(np.clip(rng.normal(1.7, 0.1), 1.5, 2.0)))
        name = f"a-{names_a[i]:03d}" if side_a else f"b-{names_b[i]:03d}"
        (a_tr if side_a else b_tr).append(Trajectory(name, t, np.column_stack([xy, z])))
    a_tr.sort(key=lambda tr: tr.id)
    b_tr.sort(key=lambda tr: tr.id)
    return TrajectorySet(a_tr), TrajectorySet(b_tr), truth
