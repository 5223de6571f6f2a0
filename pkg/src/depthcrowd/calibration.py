"""Replay-based calibration of Social Force parameters.

Every observed pedestrian is re-simulated on its own while all other
pedestrians follow their recorded paths. The mean positional deviation per
unit time plus an overlap penalty gives the objective, which is minimised
by a real-coded genetic algorithm whose best individual seeds a
Nelder-Mead refinement.

The replay engine is vectorised over (parameter set, task, neighbour), so a
whole GA population is scored against all tasks in one sweep over time.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import Trajectory, TrajectorySet
from .socialforce import (VARIANT_COEFFS, ModelParams, _dot, _norm, _unit, interaction_kernel,
                          motion_direction, segments_array)

MAX_COPED_GAP = 0.5


class TaskError(ValueError):
    """A replay task violates its preconditions."""


@dataclass(frozen=True)
class ObjectiveConfig:
    speed_percentile: float = 90.0
    penalty_enabled: bool = True
    printed_penalty_sign: bool = False
    split_ratio: float = 0.76
    speed_smoothing: int = 5
    min_subject_displacement: float = 1.0

    def __post_init__(self):
        if not 0 < self.speed_percentile <= 100:
            raise ValueError("speed_percentile must lie in (0, 100]")
        if not 0 < self.split_ratio < 1:
            raise ValueError("split_ratio must lie in (0, 1)")


@dataclass(frozen=True)
class ReplayTask:
    subject: Trajectory
    others: tuple[Trajectory, ...] = ()
    segments: np.ndarray = field(default_factory=lambda: np.zeros((0, 2, 2)))
    desired_speed: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "others", tuple(self.others))
        object.__setattr__(self, "segments", np.asarray(self.segments, dtype=float).reshape(-1, 2, 2))
        if len(self.subject) < 2 or not self.t_in < self.t_out:
            raise TaskError(f"task {self.subject.id}: replay window must have positive length")
        for o in self.others:
            inside = (o.t >= self.t_in) & (o.t <= self.t_out)
            ts = o.t[inside]
            if ts.size > 1 and np.max(np.diff(ts)) > MAX_COPED_GAP:
                raise TaskError(f"task {self.subject.id}: co-pedestrian {o.id} has a gap "
                                f"longer than {MAX_COPED_GAP} s inside the window")

    @property
    def t_in(self) -> float:
        return self.subject.start_time

    @property
    def t_out(self) -> float:
        return self.subject.end_time

    @property
    def steps(self) -> int:
        return len(self.subject)


def smoothed_speeds(traj: Trajectory, window: int = 5) -> np.ndarray:
    """Finite-difference speeds followed by a centred moving average."""
    if len(traj) < 2:
        return np.zeros(0)
    v = np.linalg.norm(np.diff(traj.xy, axis=0), axis=1) / np.diff(traj.t)
    if window > 1 and v.size >= window:
        v = np.convolve(v, np.ones(window) / window, mode="valid")
    return v


def desired_speed(traj: Trajectory, cfg: ObjectiveConfig = ObjectiveConfig()) -> float:
    v = smoothed_speeds(traj, cfg.speed_smoothing)
    if v.size == 0:
        raise TaskError(f"trajectory {traj.id} has no velocity samples")
    return float(np.percentile(v, cfg.speed_percentile))


def build_tasks(tset: TrajectorySet | Sequence[Trajectory], obstacles=(),
                cfg: ObjectiveConfig = ObjectiveConfig(), subjects: Sequence[str] | None = None,
                context: TrajectorySet | Sequence[Trajectory] | None = None,
                speeds: dict[str, float] | None = None):
    """Replay tasks for the moving trajectories of a set.

    Co-pedestrians are all other trajectories (from ``context`` if given,
    else from ``tset``) that overlap the subject in time. ``speeds`` gives
    known desired speeds by id; others are estimated from the data. Returns
    ``(tasks, rejected)`` where ``rejected`` maps ids to reasons.
    """
    trajs = list(tset)
    pool = list(context) if context is not None else trajs
    segs = obstacles if isinstance(obstacles, np.ndarray) else segments_array(list(obstacles))
    wanted = set(subjects) if subjects is not None else None
    tasks, rejected = [], {}
    for tr in trajs:
        if wanted is not None and tr.id not in wanted:
            continue
        if len(tr) < 2 or np.linalg.norm(tr.xy[-1] - tr.xy[0]) < cfg.min_subject_displacement:
            rejected[tr.id] = "not a moving subject"
            continue
        others = [o for o in pool if o.id != tr.id
                  and o.start_time <= tr.end_time and o.end_time >= tr.start_time]
        try:
            v0 = speeds[tr.id] if speeds and tr.id in speeds else desired_speed(tr, cfg)
            tasks.append(ReplayTask(tr, others, segs, v0))
        except TaskError as exc:
            rejected[tr.id] = str(exc)
    return tasks, rejected


# -- batched replay engine -------------------------------------------------------------

class ParamBatch:
    """Model parameters with array-valued coefficients, shaped for broadcasting."""

    def __init__(self, base: ModelParams, values: dict[str, np.ndarray]):
        self.variant = base.variant
        for k, v in asdict(base).items():
            setattr(self, k, v)
        for k, v in values.items():
            setattr(self, k, v)


@dataclass
class ReplayResult:
    positions: np.ndarray       # (P, T, Mmax, 2) simulated positions
    distance: np.ndarray        # (P, T) mean Euclidean deviation
    penalty: np.ndarray         # (P, T) overlap penalty
    min_separation: np.ndarray  # (P, T) closest approach to any co-pedestrian
    per_task: np.ndarray        # (P, T) per-task objective term
    objective: np.ndarray       # (P,) mean over tasks


class ReplayBatch:
    """Pre-sampled replay tasks: co-pedestrian paths on each subject's time grid."""

    def __init__(self, tasks: Sequence[ReplayTask], cfg: ObjectiveConfig = ObjectiveConfig(),
                 extra_steps: int = 0):
        if not tasks:
            raise ValueError("need at least one replay task")
        self.tasks = list(tasks)
        self.cfg = cfg
        T = len(tasks)
        M = np.array([t.steps for t in tasks])
        self.M = M
        self.extra_steps = extra_steps
        Mmax = int(M.max()) + extra_steps
        K = max(1, max(len(t.others) for t in tasks))
        S = max(1, max(len(t.segments) for t in tasks))
        self.times = np.zeros((T, Mmax))
        self.obs = np.zeros((T, Mmax, 2))
        self.step_mask = np.zeros((T, Mmax), dtype=bool)
        self.h = np.zeros((T, Mmax))
        self.co_pos = np.zeros((T, Mmax, K, 2))
        self.co_vel = np.zeros((T, Mmax, K, 2))
        self.co_mask = np.zeros((T, Mmax, K), dtype=bool)
        self.co_present = np.zeros((T, K), dtype=bool)
        self.seg = np.zeros((T, S, 2, 2))
        self.seg_mask = np.zeros((T, S), dtype=bool)
        self.start = np.zeros((T, 2))
        self.goal = np.zeros((T, 2))
        self.v0 = np.zeros(T)
        self.duration = np.zeros(T)
        for i, task in enumerate(tasks):
            tr = task.subject
            m = len(tr)
            dt_obs = float(np.median(np.diff(tr.t)))
            grid = np.concatenate([tr.t, tr.t[-1] + dt_obs * np.arange(1, Mmax - m + 1)])
            self.times[i] = grid
            self.obs[i, :m] = tr.xy
            self.obs[i, m:] = tr.xy[-1]
            self.step_mask[i, :m] = True
            self.h[i, 1:] = np.diff(grid)
            self.start[i] = tr.xy[0]
            self.goal[i] = tr.xy[-1]
            self.v0[i] = task.desired_speed if task.desired_speed is not None else desired_speed(tr, cfg)
            self.duration[i] = task.t_out - task.t_in
            for k, o in enumerate(task.others):
                self.co_present[i, k] = True
                inside = (grid >= o.start_time - 1e-9) & (grid <= o.end_time + 1e-9)
                self.co_mask[i, :, k] = inside
                xs = np.interp(grid, o.t, o.xy[:, 0])
                ys = np.interp(grid, o.t, o.xy[:, 1])
                self.co_pos[i, :, k] = np.column_stack([xs, ys])
                self.co_vel[i, :, k] = _backward_velocity(o, grid)
            ns = len(task.segments)
            self.seg[i, :ns] = task.segments
            self.seg_mask[i, :ns] = True
        self.n_others = np.maximum(self.co_present.sum(axis=1), 0)

    def run(self, base: ModelParams, values: dict[str, np.ndarray] | None = None,
            n_sets: int = 1, horizon_mask: np.ndarray | None = None) -> ReplayResult:
        """Simulate all tasks for ``n_sets`` parameter sets.

        ``values`` maps coefficient names to arrays of length ``n_sets``.
        ``horizon_mask`` (T, Mmax) overrides which steps are integrated.
        """
        values = values or {}
        P = n_sets
        pv = {k: np.asarray(v, dtype=float).reshape(P, 1, 1) for k, v in values.items()}
        pp = ParamBatch(base, pv)
        tau = pv.get("tau", base.tau)
        T, Mmax = self.times.shape
        live = self.step_mask if horizon_mask is None else horizon_mask
        r = base.radius

        e0 = _unit(self.goal - self.start)
        pos = np.broadcast_to(self.start, (P, T, 2)).copy()
        vel = np.broadcast_to(self.v0[:, None] * e0, (P, T, 2)).copy()
        out = np.zeros((P, T, Mmax, 2))
        out[:, :, 0] = pos
        min_d = np.full((P, T, self.co_pos.shape[2]), np.inf)
        cop0 = self.co_pos[:, 0][None]
        d0 = _norm(pos[:, :, None] - cop0)
        min_d = np.where(self.co_mask[:, 0][None], np.minimum(min_d, d0), min_d)
        seg_mask = self.seg_mask[None]
        has_segs = bool(self.seg_mask.any())

        for k in range(1, Mmax):
            step_live = live[:, k]
            if not step_live.any():
                break
            to_goal = self.goal - pos
            e = _unit(to_goal)
            m = motion_direction(vel, e)
            f = (self.v0[:, None] * e - vel) / tau
            f = np.where((_norm(to_goal) <= 1e-9)[..., None], 0.0, f)
            cop = self.co_pos[:, k - 1][None]
            cov = self.co_vel[:, k - 1][None]
            cmask = self.co_mask[:, k - 1][None]
            pair = interaction_kernel(pos[:, :, None], vel[:, :, None], m[:, :, None], cop, cov,
                                      r, r, pp)
            f = f + np.where(cmask[..., None], pair, 0.0).sum(axis=2)
            if has_segs:
                f = f + _masked_obstacles(pos, vel, m, r, self.seg, seg_mask, pp)
            h = self.h[:, k][None, :, None]
            vel_new = vel + f * h
            speed = _norm(vel_new)
            cap = base.speed_cap * self.v0[None]
            scale = np.where(speed > cap, cap / np.where(speed > 0, speed, 1.0), 1.0)
            vel_new = vel_new * scale[..., None]
            pos_new = pos + vel_new * h
            keep = step_live[None, :, None]
            pos = np.where(keep, pos_new, pos)
            vel = np.where(keep, vel_new, vel)
            out[:, :, k] = pos
            dk = _norm(pos[:, :, None] - self.co_pos[:, k][None])
            valid = self.co_mask[:, k][None] & step_live[None, :, None]
            min_d = np.where(valid, np.minimum(min_d, dk), min_d)

        if not np.all(np.isfinite(out)):
            raise FloatingPointError("replay produced non-finite positions")
        dev = _norm(out - self.obs[None])
        dev = np.where(self.step_mask[None], dev, 0.0)
        dist = dev.sum(axis=2) / self.M[None]
        pen = self._penalty(min_d, r)
        per_task = dist / self.duration[None] + (pen if self.cfg.penalty_enabled else 0.0)
        return ReplayResult(out, dist, pen, min_d.min(axis=2), per_task, per_task.mean(axis=1))

    def _penalty(self, min_d: np.ndarray, r: float) -> np.ndarray:
        contact = 2.0 * r
        with np.errstate(divide="ignore"):
            inv = np.where(np.isfinite(min_d), 1.0 / np.maximum(min_d, 1e-9), 0.0)
        if self.cfg.printed_penalty_sign:
            terms = np.where(np.isfinite(min_d), np.maximum(0.0, inv + 1.0 / contact), 0.0)
        else:
            terms = np.maximum(0.0, inv - 1.0 / contact)
        n = np.maximum(self.n_others, 1)[None]
        return np.where(self.n_others[None] > 0, terms.sum(axis=2) / n, 0.0)


def _backward_velocity(o: Trajectory, grid: np.ndarray) -> np.ndarray:
    """Velocity of a recorded path on ``grid``: backward difference of its samples."""
    if len(o) < 2:
        return np.zeros((grid.size, 2))
    seg_v = np.diff(o.xy, axis=0) / np.diff(o.t)[:, None]
    v = np.vstack([seg_v[:1], seg_v])  # sample i takes the segment ending at it
    idx = np.clip(np.searchsorted(o.t, grid - 1e-9), 0, len(o) - 1)
    return v[idx]


def _masked_obstacles(pos, vel, m, r, seg, seg_mask, pp) -> np.ndarray:
    s0 = seg[None, :, :, 0]          # (1, T, S, 2)
    s1 = seg[None, :, :, 1]
    d = s1 - s0
    L2 = _dot(d, d)
    p = pos[:, :, None]
    u = np.where(L2 > 0, _dot(p - s0, d) / np.where(L2 > 0, L2, 1.0), 0.0)
    cp = s0 + np.clip(u, 0.0, 1.0)[..., None] * d
    f = interaction_kernel(p, vel[:, :, None], m[:, :, None], cp, np.zeros_like(cp), r, 0.0, pp,
                           anisotropic=False)
    return np.where(seg_mask[..., None], f, 0.0).sum(axis=2)


# -- objective -----------------------------------------------------------------------

def replay_simulate(task: ReplayTask, params: ModelParams,
                    cfg: ObjectiveConfig = ObjectiveConfig(), extra_steps: int = 0) -> Trajectory:
    """Re-simulate the task's subject against its recorded co-pedestrians.

    The result has the subject's timestamps (plus ``extra_steps`` further
    samples when requested) and z equal to the subject's mean height.
    """
    batch = ReplayBatch([task], cfg, extra_steps=extra_steps)
    horizon = np.ones_like(batch.step_mask) if extra_steps else None
    res = batch.run(params, horizon_mask=horizon)
    xy = res.positions[0, 0]
    t = batch.times[0]
    z = np.full(len(t), task.subject.mean_height)
    return Trajectory(task.subject.id, t, np.column_stack([xy, z]))


def trajectory_distance(observed: Trajectory, simulated: Trajectory) -> float:
    """Mean horizontal distance between corresponding points."""
    if len(observed) != len(simulated):
        raise ValueError("trajectories must have the same number of points")
    if not np.allclose(observed.t, simulated.t, atol=1e-9, rtol=0):
        raise ValueError("trajectories must share timestamps")
    return float(np.mean(np.linalg.norm(observed.xy - simulated.xy, axis=1)))


def overlap_penalty(simulated: Trajectory, others: Sequence[Trajectory], radius_subject: float,
                    radius_others: float | Sequence[float], printed_sign: bool = False) -> float:
    """Average over co-pedestrians of the worst inverse-distance overlap excess."""
    if not others:
        return 0.0
    radii = np.broadcast_to(np.asarray(radius_others, dtype=float), (len(others),))
    total = 0.0
    for o, rb in zip(others, radii):
        lo, hi = max(o.start_time, simulated.start_time), min(o.end_time, simulated.end_time)
        sel = (simulated.t >= lo - 1e-9) & (simulated.t <= hi + 1e-9)
        if not sel.any():
            continue
        ts = simulated.t[sel]
        other_xy = np.column_stack([np.interp(ts, o.t, o.xy[:, 0]), np.interp(ts, o.t, o.xy[:, 1])])
        d = np.linalg.norm(simulated.xy[sel] - other_xy, axis=1)
        inv = 1.0 / np.maximum(d, 1e-9)
        contact = 1.0 / (radius_subject + rb)
        vals = inv + contact if printed_sign else inv - contact
        total += max(0.0, float(vals.max()))
    return total / len(others)


@dataclass
class SimilarityReport:
    s: float
    per_task: dict[str, float]
    excluded: dict[str, str]


def similarity_report(tasks: Sequence[ReplayTask], params: ModelParams,
                      cfg: ObjectiveConfig = ObjectiveConfig()) -> SimilarityReport:
    """Objective with per-task terms; tasks whose replay fails are listed, not dropped silently."""
    good, excluded = [], {}
    for t in tasks:
        try:
            ReplayBatch([t], cfg).run(params)
            good.append(t)
        except (FloatingPointError, TaskError) as exc:
            excluded[t.subject.id] = str(exc)
    if not good:
        raise ValueError("no replay task could be evaluated")
    res = ReplayBatch(good, cfg).run(params)
    per = {t.subject.id: float(v) for t, v in zip(good, res.per_task[0])}
    return SimilarityReport(float(res.objective[0]), per, excluded)


def similarity(tasks: Sequence[ReplayTask], params: ModelParams,
               cfg: ObjectiveConfig = ObjectiveConfig()) -> float:
    if not tasks:
        raise ValueError("similarity needs at least one task")
    try:
        return float(ReplayBatch(tasks, cfg).run(params).objective[0])
    except FloatingPointError:
        return similarity_report(tasks, params, cfg).s


# -- optimisers -----------------------------------------------------------------------

@dataclass(frozen=True)
class GAConfig:
    population: int = 40
    generations: int = 60
    tournament: int = 3
    crossover_rate: float = 0.9
    blend_alpha: float = 0.5
    mutation_rate: float = 0.2
    mutation_scale: float = 0.05
    elite: int = 2


@dataclass(frozen=True)
class NMConfig:
    max_iter: int = 200
    xatol: float = 1e-4
    fatol: float = 1e-7
    initial_step: float = 0.05


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    trace: list[tuple[int, float]]
    n_eval: int
    improved: bool = True


def genetic_minimize(fun_batch: Callable[[np.ndarray], np.ndarray], lower, upper,
                     cfg: GAConfig = GAConfig(), seed=0) -> OptimizeResult:
    """Real-coded GA: tournament selection, blend crossover, Gaussian mutation, elitism.

    ``fun_batch`` maps a (P, D) array of candidates to P objective values.
    The trace holds the best objective after each generation (generation 0
    is the initial population).
    """
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    D = lo.size
    span = hi - lo
    pop = lo + rng.random((cfg.population, D)) * span
    fit = np.asarray(fun_batch(pop), dtype=float)
    n_eval = len(pop)
    fit = np.where(np.isfinite(fit), fit, np.inf)
    trace = [(0, float(fit.min()))]
    initial_best = fit.min()
    for gen in range(1, cfg.generations + 1):
        order = np.argsort(fit, kind="stable")
        elite = pop[order[:cfg.elite]]
        elite_fit = fit[order[:cfg.elite]]
        n_child = cfg.population - cfg.elite

        def pick():
            idx = rng.integers(0, cfg.population, size=cfg.tournament)
            return pop[idx[np.argmin(fit[idx])]]

        children = np.empty((n_child, D))
        for c in range(n_child):
            p1, p2 = pick(), pick()
            if rng.random() < cfg.crossover_rate:
                gap = np.abs(p1 - p2)
                lo_b = np.minimum(p1, p2) - cfg.blend_alpha * gap
                child = lo_b + rng.random(D) * (gap * (1 + 2 * cfg.blend_alpha))
            else:
                child = p1.copy()
            mutate = rng.random(D) < cfg.mutation_rate
            child = child + mutate * rng.normal(0.0, cfg.mutation_scale, D) * span
            children[c] = np.clip(child, lo, hi)
        child_fit = np.asarray(fun_batch(children), dtype=float)
        child_fit = np.where(np.isfinite(child_fit), child_fit, np.inf)
        n_eval += n_child
        pop = np.vstack([elite, children])
        fit = np.concatenate([elite_fit, child_fit])
        trace.append((gen, float(fit.min())))
    best = int(np.argmin(fit))
    return OptimizeResult(pop[best].copy(), float(fit[best]), trace, n_eval,
                          improved=bool(fit[best] < initial_best))


def nelder_mead(fun: Callable[[np.ndarray], float], x0, lower=None, upper=None,
                cfg: NMConfig = NMConfig()) -> OptimizeResult:
    """Nelder-Mead simplex descent (reflect 1, expand 2, contract 1/2, shrink 1/2).

    Trial points are clipped into ``[lower, upper]``. The initial simplex
    perturbs each coordinate by ``initial_step`` relative (0.00025 if zero).
    """
    x0 = np.asarray(x0, dtype=float)
    D = x0.size
    lo = np.full(D, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    hi = np.full(D, np.inf) if upper is None else np.asarray(upper, dtype=float)
    n_eval = 0

    def f(x):
        nonlocal n_eval
        n_eval += 1
        v = float(fun(np.clip(x, lo, hi)))
        return v if np.isfinite(v) else np.inf

    simplex = [np.clip(x0, lo, hi)]
    for i in range(D):
        y = x0.copy()
        y[i] = y[i] * (1 + cfg.initial_step) if y[i] != 0 else 0.00025
        if not lo[i] <= y[i] <= hi[i]:
            y[i] = x0[i] * (1 - cfg.initial_step) if x0[i] != 0 else -0.00025
        simplex.append(np.clip(y, lo, hi))
    simplex = np.array(simplex)
    values = np.array([f(x) for x in simplex])
    trace = [(0, float(values.min()))]
    for it in range(1, cfg.max_iter + 1):
        order = np.argsort(values, kind="stable")
        simplex, values = simplex[order], values[order]
        if (np.max(np.abs(simplex[1:] - simplex[0])) <= cfg.xatol
                and np.max(np.abs(values[1:] - values[0])) <= cfg.fatol):
            break
        centroid = simplex[:-1].mean(axis=0)
        xr = np.clip(centroid + (centroid - simplex[-1]), lo, hi)
        fr = f(xr)
        if fr < values[0]:
            xe = np.clip(centroid + 2.0 * (centroid - simplex[-1]), lo, hi)
            fe = f(xe)
            simplex[-1], values[-1] = (xe, fe) if fe < fr else (xr, fr)
        elif fr < values[-2]:
            simplex[-1], values[-1] = xr, fr
        else:
            if fr < values[-1]:
                xc = np.clip(centroid + 0.5 * (xr - centroid), lo, hi)
                fc = f(xc)
                accept = fc <= fr
            else:
                xc = np.clip(centroid + 0.5 * (simplex[-1] - centroid), lo, hi)
                fc = f(xc)
                accept = fc < values[-1]
            if accept:
                simplex[-1], values[-1] = xc, fc
            else:
                for i in range(1, D + 1):
                    simplex[i] = np.clip(simplex[0] + 0.5 * (simplex[i] - simplex[0]), lo, hi)
                    values[i] = f(simplex[i])
        trace.append((it, float(values.min())))
    best = int(np.argmin(values))
    return OptimizeResult(np.clip(simplex[best], lo, hi), float(values[best]), trace, n_eval)


# -- fitting -----------------------------------------------------------------------

DEFAULT_BOUNDS = {"a": (0.01, 10.0), "b": (0.01, 3.0), "a_n": (0.01, 10.0), "b_n": (0.01, 10.0),
                  "c_n": (0.01, 10.0), "a_p": (0.01, 10.0), "b_p": (0.01, 10.0),
                  "c_p": (0.01, 10.0), "tau": (0.1, 2.0), "anisotropy": (0.0, 1.0)}


@dataclass(frozen=True)
class OptimizerConfig:
    ga: GAConfig = GAConfig()
    nm: NMConfig = NMConfig()
    fit_tau: bool = False
    fit_anisotropy: bool = False


@dataclass
class FitResult:
    params: ModelParams
    s_cal: float
    s_val: float | None
    ga_trace: list[tuple[int, float]]
    nm_trace: list[tuple[int, float]]
    seed: int
    config: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    n_cal: int = 0
    n_val: int = 0

    def to_text(self) -> str:
        p = self.params
        names = list(p.coeff_names) + ["tau", "anisotropy"]
        lines = [
            f"variant: {p.variant}",
            "parameters: " + " ".join(f"{n}={getattr(p, n):.9g}" for n in names),
            f"s_cal: {self.s_cal:.9g}",
            f"s_val: {'nan' if self.s_val is None else format(self.s_val, '.9g')}",
            f"n_cal: {self.n_cal}",
            f"n_val: {self.n_val}",
            f"seed: {self.seed}",
        ]
        for k in sorted(self.config):
            lines.append(f"config.{k}: {self.config[k]}")
        for w in self.warnings:
            lines.append(f"warning: {w}")
        lines.append("trace: stage iteration best_s")
        lines += [f"ga {g} {v:.9g}" for g, v in self.ga_trace]
        lines += [f"nm {g} {v:.9g}" for g, v in self.nm_trace]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def read_fit(path) -> ModelParams:
    """Recover the fitted :class:`ModelParams` from a FitResult file."""
    variant, values, cfg = None, {}, {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        key, _, val = line.partition(":")
        if key == "variant":
            variant = val.strip()
        elif key == "parameters":
            for tok in val.split():
                n, _, v = tok.partition("=")
                values[n] = float(v)
        elif key.startswith("config.base."):
            cfg[key[len("config.base."):]] = val.strip()
    if variant is None:
        raise ValueError(f"{path}: not a fit result")
    base = {}
    for k in ("dt", "v_rel_floor", "radius", "speed_cap"):
        if k in cfg:
            base[k] = float(cfg[k])
    if "printed_sign" in cfg:
        base["printed_sign"] = cfg["printed_sign"] == "True"
    return ModelParams(variant=variant, **base, **values)


def fit_model(cal_tasks: Sequence[ReplayTask], variant: str, opt: OptimizerConfig = OptimizerConfig(),
              seed: int = 0, val_tasks: Sequence[ReplayTask] | None = None,
              base: ModelParams | None = None, bounds: dict | None = None,
              cfg: ObjectiveConfig = ObjectiveConfig(),
              objective: Callable[[np.ndarray], np.ndarray] | None = None) -> FitResult:
    """Fit one variant's interaction coefficients by GA followed by Nelder-Mead.

    ``objective`` replaces the replay objective (it receives a (P, D) array
    of candidates and must return P values); useful for surrogate checks.
    """
    base = replace(base or ModelParams(), variant=variant)
    extra = (("tau",) if opt.fit_tau else ()) + (("anisotropy",) if opt.fit_anisotropy else ())
    names = VARIANT_COEFFS[variant] + extra
    bnds = dict(DEFAULT_BOUNDS, **(bounds or {}))
    lower = np.array([bnds[n][0] for n in names])
    upper = np.array([bnds[n][1] for n in names])

    if objective is None:
        if not cal_tasks:
            raise ValueError("fit_model needs calibration tasks")
        batch = ReplayBatch(cal_tasks, cfg)

        def objective(X):
            X = np.atleast_2d(X)
            vals = {n: X[:, i] for i, n in enumerate(names)}
            return batch.run(base, vals, n_sets=len(X)).objective

    ga = genetic_minimize(objective, lower, upper, opt.ga, seed)
    nm = nelder_mead(lambda x: float(objective(x[None])[0]), ga.x, lower, upper, opt.nm)
    x = nm.x if nm.fun <= ga.fun else ga.x
    s_cal = min(nm.fun, ga.fun)
    params = base.with_vector(x, extra)
    msgs = []
    if not ga.improved and nm.fun >= ga.fun:
        msgs.append("optimizer did not improve on the initial population")
        warnings.warn(msgs[-1], RuntimeWarning, stacklevel=2)
    s_val = similarity(val_tasks, params, cfg) if val_tasks else None
    config = {"ga." + k: v for k, v in asdict(opt.ga).items()}
    config.update({"nm." + k: v for k, v in asdict(opt.nm).items()})
    config.update({"objective." + k: v for k, v in asdict(cfg).items()})
    config.update({"base." + k: v for k, v in asdict(base).items()
                   if k not in names and k != "variant"})
    config["bounds"] = {n: bnds[n] for n in names}
    return FitResult(params, float(s_cal), s_val, ga.trace, nm.trace, seed, config, msgs,
                     len(cal_tasks) if cal_tasks else 0, len(val_tasks) if val_tasks else 0)


def split_dataset(tset: TrajectorySet | Sequence[Trajectory], ratio: float = 0.76, seed: int = 0):
    """Seeded random partition into calibration and validation lists."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    trajs = list(tset)
    n = len(trajs)
    n_cal = int(round(ratio * n))
    perm = np.random.default_rng(seed).permutation(n)
    cal_idx = np.sort(perm[:n_cal])
    val_idx = np.sort(perm[n_cal:])
    return [trajs[i] for i in cal_idx], [trajs[i] for i in val_idx]
