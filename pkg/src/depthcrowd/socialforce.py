"""Social Force dynamics with three interchangeable pedestrian repulsions.

Variant ``A`` is the circular exponential repulsion, ``B`` the elliptical
(velocity-dependent) one, and ``C`` splits the repulsion into a deceleration
term against the walking direction and a perpendicular evasive term.

The force kernels work on numpy arrays with any leading shape and trailing
axis of size 2, so whole scenes (or batches of replay tasks) are evaluated
in one call. The per-agent functions (:func:`repulsive_a`, ...) are thin
wrappers over the kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

VARIANTS = ("A", "B", "C")
_TINY = 1e-9

# Names of the interaction coefficients that each variant calibrates.
VARIANT_COEFFS = {"A": ("a", "b"), "B": ("a", "b"),
                  "C": ("a_n", "b_n", "c_n", "a_p", "b_p", "c_p")}


class SimulationError(RuntimeError):
    """Raised when the integrator meets a non-finite force."""


@dataclass(frozen=True)
class ModelParams:
    variant: str = "A"
    a: float = 2.0
    b: float = 0.3
    a_n: float = 1.5
    b_n: float = 1.0
    c_n: float = 0.8
    a_p: float = 1.5
    b_p: float = 0.5
    c_p: float = 0.8
    anisotropy: float = 0.3
    dt: float = 1.0 / 30.0
    v_rel_floor: float = 0.05
    radius: float = 0.25
    tau: float = 0.5
    speed_cap: float = 1.3
    printed_sign: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        for name in VARIANT_COEFFS[self.variant]:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive for variant {self.variant}")
        if not 0.0 <= self.anisotropy <= 1.0:
            raise ValueError("anisotropy must lie in [0, 1]")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not (self.radius > 0 and self.tau > 0 and self.v_rel_floor > 0):
            raise ValueError("radius, tau and v_rel_floor must be positive")

    @property
    def coeff_names(self) -> tuple[str, ...]:
        return VARIANT_COEFFS[self.variant]

    def vector(self, extra: Sequence[str] = ()) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.coeff_names + tuple(extra)], dtype=float)

    def with_vector(self, vec, extra: Sequence[str] = ()) -> "ModelParams":
        names = self.coeff_names + tuple(extra)
        return replace(self, **{n: float(v) for n, v in zip(names, vec)})


@dataclass
class Agent:
    position: np.ndarray
    velocity: np.ndarray
    desired_speed: float
    goal: np.ndarray
    radius: float = 0.25
    tau: float = 0.5

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.goal = np.asarray(self.goal, dtype=float)
        if not (self.desired_speed > 0 and self.tau > 0 and self.radius > 0):
            raise ValueError("desired_speed, tau and radius must be positive")


@dataclass(frozen=True)
class Obstacle:
    """Line segment ``start``-``end``; a point obstacle has ``start == end``."""

    start: tuple[float, float]
    end: tuple[float, float] | None = None

    @property
    def segment(self) -> np.ndarray:
        end = self.start if self.end is None else self.end
        return np.array([self.start, end], dtype=float)


def segments_array(obstacles: Sequence[Obstacle]) -> np.ndarray:
    if not obstacles:
        return np.zeros((0, 2, 2))
    return np.stack([o.segment for o in obstacles])


# -- vector helpers --------------------------------------------------------------

def _norm(v: np.ndarray) -> np.ndarray:
    return np.sqrt(v[..., 0] ** 2 + v[..., 1] ** 2)


def _dot(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 0] + u[..., 1] * v[..., 1]


def _unit(v: np.ndarray, fallback: np.ndarray | None = None) -> np.ndarray:
    n = _norm(v)[..., None]
    safe = np.where(n > _TINY, n, 1.0)
    out = v / safe
    if fallback is None:
        return np.where(n > _TINY, out, 0.0)
    return np.where(n > _TINY, out, np.broadcast_to(fallback, out.shape))


def desired_direction(pos: np.ndarray, goal: np.ndarray) -> np.ndarray:
    return _unit(np.asarray(goal, dtype=float) - np.asarray(pos, dtype=float))


def motion_direction(vel: np.ndarray, desired: np.ndarray) -> np.ndarray:
    """Unit walking direction; the desired direction stands in when at rest."""
    return _unit(vel, fallback=desired)


# -- kernels -------------------------------------------------------------------------

def driving_kernel(vel, v0, e, tau) -> np.ndarray:
    vel = np.asarray(vel, dtype=float)
    return (np.asarray(v0)[..., None] * e - vel) / np.asarray(tau)[..., None]


def anisotropy_kernel(cos_phi, lam) -> np.ndarray:
    return lam + (1.0 - lam) * (1.0 + cos_phi) / 2.0


def semi_minor_kernel(d: np.ndarray, rel_vel: np.ndarray, dt: float) -> np.ndarray:
    """Semi-minor axis of the ellipse through ``d`` with foci offset by ``rel_vel*dt``.

    ``d`` points from the other pedestrian to the subject and ``rel_vel`` is
    the other's velocity minus the subject's.
    """
    y = rel_vel * dt
    rad = (_norm(d) + _norm(d - y)) ** 2 - _norm(y) ** 2
    return 0.5 * np.sqrt(np.maximum(rad, 0.0))


def interaction_kernel(pos_a, vel_a, dir_a, pos_b, vel_b, r_a, r_b,
                       p: ModelParams, anisotropic: bool = True) -> np.ndarray:
    """Repulsive acceleration on ``a`` caused by ``b`` under ``p.variant``.

    ``dir_a`` is the subject's unit walking direction. Returns an array of
    shape ``broadcast(...) + (2,)``.
    """
    pos_a = np.asarray(pos_a, dtype=float)
    pos_b = np.asarray(pos_b, dtype=float)
    vel_a = np.asarray(vel_a, dtype=float)
    vel_b = np.asarray(vel_b, dtype=float)
    d = pos_a - pos_b
    dist = _norm(d)
    # Coincident positions: push straight back against the walking direction.
    dhat = _unit(d, fallback=-np.asarray(dir_a, dtype=float))

    if p.variant in ("A", "B"):
        if p.variant == "A":
            expo = (np.asarray(r_a) + np.asarray(r_b) - dist) / p.b
            expo = -expo if p.printed_sign else np.minimum(expo, 0.0)
            mag = p.a * np.exp(expo)
        else:
            w = semi_minor_kernel(d, vel_b - vel_a, p.dt)
            mag = p.a * np.exp(-w / p.b)
        if anisotropic:
            cos_phi = -_dot(np.broadcast_to(dir_a, dhat.shape), dhat)
            mag = mag * anisotropy_kernel(cos_phi, p.anisotropy)
        return mag[..., None] * dhat

    m = np.broadcast_to(np.asarray(dir_a, dtype=float), dhat.shape)
    cos_t = np.clip(-_dot(m, dhat), -1.0, 1.0)
    theta = np.arccos(cos_t)
    v_rel = np.maximum(_norm(vel_b - vel_a), p.v_rel_floor)
    perp = np.stack([-m[..., 1], m[..., 0]], axis=-1)
    side = np.where(_dot(perp, d) >= 0.0, 1.0, -1.0)
    dec = p.a_n * np.exp(-p.b_n * theta ** 2 / v_rel - p.c_n * dist)
    eva = p.a_p * np.exp(-p.b_p * np.abs(theta) / v_rel - p.c_p * dist)
    return -m * dec[..., None] + perp * (side * eva)[..., None]


def closest_points(pos: np.ndarray, segments: np.ndarray) -> np.ndarray:
    """Closest point on every segment for every position: shape ``pos.shape[:-1] + (K, 2)``."""
    pos = np.asarray(pos, dtype=float)[..., None, :]
    s0, s1 = segments[:, 0], segments[:, 1]
    seg = s1 - s0
    L2 = _dot(seg, seg)
    u = np.where(L2 > 0, _dot(pos - s0, seg) / np.where(L2 > 0, L2, 1.0), 0.0)
    u = np.clip(u, 0.0, 1.0)
    return s0 + u[..., None] * seg


def obstacle_kernel(pos_a, vel_a, dir_a, r_a, segments: np.ndarray, p: ModelParams) -> np.ndarray:
    """Summed obstacle repulsion; obstacles act as still, zero-radius pedestrians."""
    if len(segments) == 0:
        return np.zeros(np.shape(pos_a))
    cp = closest_points(pos_a, segments)
    f = interaction_kernel(np.asarray(pos_a)[..., None, :], np.asarray(vel_a)[..., None, :],
                           np.asarray(dir_a)[..., None, :], cp, np.zeros_like(cp),
                           np.asarray(r_a)[..., None], 0.0, p, anisotropic=False)
    return f.sum(axis=-2)


# -- per-agent API ---------------------------------------------------------------------

def _dirs(agent: Agent) -> tuple[np.ndarray, np.ndarray]:
    e = desired_direction(agent.position, agent.goal)
    return e, motion_direction(agent.velocity, e)


def driving_force(agent: Agent) -> np.ndarray:
    """Relaxation of the velocity towards ``desired_speed`` along the goal direction.

    Zero once the agent stands on its goal (see :func:`arrived`).
    """
    if arrived(agent):
        return np.zeros(2)
    e = desired_direction(agent.position, agent.goal)
    return driving_kernel(agent.velocity, agent.desired_speed, e, agent.tau)


def arrived(agent: Agent, tol: float = _TINY) -> bool:
    return bool(np.linalg.norm(agent.goal - agent.position) <= tol)


def _pair(alpha: Agent, beta: Agent, params: ModelParams, variant: str) -> np.ndarray:
    _, m = _dirs(alpha)
    p = params if params.variant == variant else replace(params, variant=variant)
    return interaction_kernel(alpha.position, alpha.velocity, m, beta.position, beta.velocity,
                              alpha.radius, beta.radius, p)


def repulsive_a(alpha: Agent, beta: Agent, params: ModelParams) -> np.ndarray:
    return _pair(alpha, beta, params, "A")


def repulsive_b(alpha: Agent, beta: Agent, params: ModelParams) -> np.ndarray:
    return _pair(alpha, beta, params, "B")


def repulsive_c(alpha: Agent, beta: Agent, params: ModelParams) -> np.ndarray:
    return _pair(alpha, beta, params, "C")


def semi_minor_axis(alpha: Agent, beta: Agent, dt: float) -> float:
    return float(semi_minor_kernel(alpha.position - beta.position,
                                   beta.velocity - alpha.velocity, dt))


def anisotropy_weight(phi: float, lam: float) -> float:
    if not 0.0 <= lam <= 1.0:
        raise ValueError("anisotropy must lie in [0, 1]")
    return float(anisotropy_kernel(math.cos(phi), lam))


def obstacle_force(alpha: Agent, obstacle: Obstacle, params: ModelParams) -> np.ndarray:
    _, m = _dirs(alpha)
    return obstacle_kernel(alpha.position, alpha.velocity, m, alpha.radius,
                           obstacle.segment[None], params)


def total_force(alpha: Agent, others: Sequence[Agent], obstacles: Sequence[Obstacle],
                params: ModelParams) -> np.ndarray:
    f = driving_force(alpha)
    _, m = _dirs(alpha)
    for beta in others:
        f = f + interaction_kernel(alpha.position, alpha.velocity, m, beta.position,
                                   beta.velocity, alpha.radius, beta.radius, params)
    return f + obstacle_kernel(alpha.position, alpha.velocity, m, alpha.radius,
                               segments_array(obstacles), params)


# -- scene integration -----------------------------------------------------------------

@dataclass
class SceneState:
    """All agents of a scene as arrays; inactive agents exert and feel no force."""

    t: float
    pos: np.ndarray
    vel: np.ndarray
    v0: np.ndarray
    goal: np.ndarray
    radius: np.ndarray
    tau: np.ndarray
    active: np.ndarray
    ids: list[str] = field(default_factory=list)

    @classmethod
    def from_agents(cls, agents: Sequence[Agent], t: float = 0.0,
                    ids: Sequence[str] | None = None) -> "SceneState":
        n = len(agents)
        return cls(
            t=t,
            pos=np.array([a.position for a in agents], dtype=float).reshape(n, 2),
            vel=np.array([a.velocity for a in agents], dtype=float).reshape(n, 2),
            v0=np.array([a.desired_speed for a in agents], dtype=float),
            goal=np.array([a.goal for a in agents], dtype=float).reshape(n, 2),
            radius=np.array([a.radius for a in agents], dtype=float),
            tau=np.array([a.tau for a in agents], dtype=float),
            active=np.ones(n, dtype=bool),
            ids=list(ids) if ids is not None else [str(i) for i in range(n)],
        )

    def copy(self) -> "SceneState":
        return SceneState(self.t, self.pos.copy(), self.vel.copy(), self.v0.copy(),
                          self.goal.copy(), self.radius.copy(), self.tau.copy(),
                          self.active.copy(), list(self.ids))


def scene_forces(state: SceneState, segments: np.ndarray, params: ModelParams) -> np.ndarray:
    """Total acceleration of every agent, shape (N, 2); zero for inactive agents."""
    n = len(state.v0)
    f = np.zeros((n, 2))
    act = np.flatnonzero(state.active)
    if act.size == 0:
        return f
    pos, vel = state.pos[act], state.vel[act]
    to_goal = state.goal[act] - pos
    at_goal = _norm(to_goal) <= _TINY
    e = _unit(to_goal)
    m = motion_direction(vel, e)
    drive = driving_kernel(vel, state.v0[act], e, state.tau[act])
    drive[at_goal] = 0.0
    pair = interaction_kernel(pos[:, None], vel[:, None], m[:, None], pos[None, :], vel[None, :],
                              state.radius[act][:, None], state.radius[act][None, :], params)
    k = len(act)
    pair[np.arange(k), np.arange(k)] = 0.0
    f[act] = drive + pair.sum(axis=1) + obstacle_kernel(pos, vel, m, state.radius[act], segments, params)
    return f


def integrate(pos, vel, force, v0, p: ModelParams):
    """Semi-implicit Euler with a speed cap at ``speed_cap * v0``."""
    vel = vel + force * p.dt
    speed = _norm(vel)
    cap = p.speed_cap * np.asarray(v0)
    scale = np.where(speed > cap, cap / np.where(speed > 0, speed, 1.0), 1.0)
    vel = vel * scale[..., None]
    return pos + vel * p.dt, vel


def step(state: SceneState, segments: np.ndarray, params: ModelParams) -> SceneState:
    f = scene_forces(state, segments, params)
    if not np.all(np.isfinite(f)):
        bad = [state.ids[i] for i in np.flatnonzero(~np.all(np.isfinite(f), axis=1))]
        raise SimulationError(f"non-finite force at t={state.t:.3f} for agents {bad}")
    new = state.copy()
    act = state.active
    new.pos[act], new.vel[act] = integrate(state.pos[act], state.vel[act], f[act],
                                           state.v0[act], params)
    new.t = state.t + params.dt
    return new


# -- scene files ---------------------------------------------------------------------------

def write_scene(path, agents: Sequence[Agent], obstacles: Sequence[Obstacle],
                ids: Sequence[str] | None = None) -> None:
    ids = list(ids) if ids is not None else [str(i) for i in range(len(agents))]
    lines = ["# agent id x y vx vy v0 goal_x goal_y r tau", "# obstacle x1 y1 x2 y2"]
    for i, a in zip(ids, agents):
        vals = (*a.position, *a.velocity, a.desired_speed, *a.goal, a.radius, a.tau)
        lines.append("agent " + i + " " + " ".join(f"{v:.9g}" for v in vals))
    for o in obstacles:
        s = o.segment
        lines.append("obstacle " + " ".join(f"{v:.9g}" for v in s.reshape(-1)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_scene(path) -> tuple[list[str], list[Agent], list[Obstacle]]:
    ids, agents, obstacles = [], [], []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "agent" and len(parts) == 11:
            v = [float(x) for x in parts[2:]]
            ids.append(parts[1])
            agents.append(Agent(v[0:2], v[2:4], v[4], v[5:7], v[7], v[8]))
        elif parts[0] == "obstacle" and len(parts) == 5:
            v = [float(x) for x in parts[1:]]
            obstacles.append(Obstacle((v[0], v[1]), (v[2], v[3])))
        else:
            raise ValueError(f"{path}: malformed scene record {line!r}")
    return ids, agents, obstacles
