"""Walking-speed histograms, walking-time CDFs and the two-sample KS test."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import kolmogorov

from .calibration import ObjectiveConfig, ReplayBatch, ReplayTask, smoothed_speeds
from .core import Trajectory, TrajectorySet
from .socialforce import ModelParams

SPEED_BIN = 0.1
SMALL_SAMPLE = 25


@dataclass
class SpeedDistribution:
    """Per-trajectory mean speeds, their histogram and a moment-based Gaussian fit."""
    edges: np.ndarray
    counts: np.ndarray
    mu: float
    sigma: float
    speeds: np.ndarray
    label: str = "per-trajectory mean speed"

    def __post_init__(self):
        if self.sigma < 0 or np.any(self.counts < 0):
            raise ValueError("sigma and counts must be non-negative")

    def table(self) -> str:
        """Two columns: bin centre (m/s) and count."""
        centres = 0.5 * (self.edges[:-1] + self.edges[1:])
        lines = [f"# {self.label}; gaussian mu={self.mu:.6f} sigma={self.sigma:.6f} n={self.speeds.size}",
                 "speed_mps count"]
        lines += [f"{c:.2f} {int(n)}" for c, n in zip(centres, self.counts)]
        return "\n".join(lines) + "\n"


def trajectory_mean_speed(traj: Trajectory, window: int = 5) -> float:
    v = smoothed_speeds(traj, window)
    if v.size == 0:
        raise ValueError(f"trajectory {traj.id} needs at least 2 points")
    return float(v.mean())


def speed_distribution(tset: TrajectorySet | Sequence[Trajectory], window: int = 5,
                       bin_width: float = SPEED_BIN) -> SpeedDistribution:
    """Histogram of per-trajectory mean speeds with a sample-moment Gaussian fit.

    Trajectories with fewer than 2 points are skipped; an empty result is an error.
    """
    speeds = np.array([trajectory_mean_speed(tr, window) for tr in tset if len(tr) >= 2])
    if speeds.size == 0:
        raise ValueError("speed distribution needs at least one trajectory with 2 points")
    lo = np.floor(speeds.min() / bin_width + 1e-9) * bin_width
    hi = np.ceil(speeds.max() / bin_width + 1e-9) * bin_width
    n_bins = max(int(round((hi - lo) / bin_width)), 1)
    edges = lo + bin_width * np.arange(n_bins + 1)
    counts, _ = np.histogram(speeds, edges)
    return SpeedDistribution(edges, counts, float(speeds.mean()), float(speeds.std()), speeds)


# -- walking times -------------------------------------------------------------------------

def _segment_crossings(p0: np.ndarray, p1: np.ndarray, g0: np.ndarray, g1: np.ndarray) -> np.ndarray:
    """Fraction along each path step ``p0 -> p1`` where it meets gate ``g0 g1``; NaN if it does not."""
    r = p1 - p0
    s = g1 - g0
    denom = r[:, 0] * s[1] - r[:, 1] * s[0]
    q = g0 - p0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = (q[:, 0] * s[1] - q[:, 1] * s[0]) / denom
        w = (q[:, 0] * r[:, 1] - q[:, 1] * r[:, 0]) / denom
    hit = (denom != 0) & (u >= 0) & (u < 1) & (w >= 0) & (w <= 1)
    return np.where(hit, u, np.nan)


def gate_crossing_times(traj: Trajectory, gate) -> np.ndarray:
    """Interpolated times at which ``traj`` crosses the segment ``gate = ((x0, y0), (x1, y1))``."""
    g = np.asarray(gate, dtype=float)
    if len(traj) < 2:
        return np.zeros(0)
    u = _segment_crossings(traj.xy[:-1], traj.xy[1:], g[0], g[1])
    k = np.flatnonzero(np.isfinite(u))
    return traj.t[k] + u[k] * (traj.t[k + 1] - traj.t[k])


def walking_time(traj: Trajectory, gate_a, gate_b) -> float | None:
    """Time from the first crossing of either gate to the next crossing of the other.

    Works for both walking directions. ``None`` when no complete passage exists.
    """
    ta = gate_crossing_times(traj, gate_a)
    tb = gate_crossing_times(traj, gate_b)
    if ta.size == 0 or tb.size == 0:
        return None
    if ta[0] <= tb[0]:
        later = tb[tb > ta[0]]
        return float(later[0] - ta[0]) if later.size else None
    later = ta[ta > tb[0]]
    return float(later[0] - tb[0]) if later.size else None


@dataclass
class WalkingTimeCdf:
    times: np.ndarray
    excluded: list[str] = field(default_factory=list)

    @property
    def cdf(self) -> np.ndarray:
        n = self.times.size
        return np.arange(1, n + 1) / n if n else np.zeros(0)

    def __call__(self, t) -> np.ndarray:
        """Right-continuous empirical CDF at ``t``."""
        if self.times.size == 0:
            raise ValueError("empty walking-time distribution")
        return np.searchsorted(self.times, np.asarray(t, dtype=float), side="right") / self.times.size

    def table(self, label: str = "") -> str:
        head = f"# walking-time cdf{(' ' + label) if label else ''}; n={self.times.size} " \
               f"excluded={len(self.excluded)}"
        lines = [head, "walking_time_s cdf"]
        lines += [f"{t:.6f} {c:.6f}" for t, c in zip(self.times, self.cdf)]
        return "\n".join(lines) + "\n"


def walking_time_cdf(tset: TrajectorySet | Sequence[Trajectory], gate_a, gate_b) -> WalkingTimeCdf:
    """Empirical CDF of walking times between two gate segments.

    Trajectories that never pass both gates are excluded and listed.
    """
    times, excluded = [], []
    for tr in tset:
        tw = walking_time(tr, gate_a, gate_b)
        if tw is None:
            excluded.append(tr.id)
        else:
            times.append(tw)
    if not times:
        warnings.warn("no trajectory crosses both gates; walking-time CDF is empty",
                      RuntimeWarning, stacklevel=2)
    return WalkingTimeCdf(np.sort(np.array(times, dtype=float)), excluded)


def replay_trajectories(tasks: Sequence[ReplayTask], params: ModelParams,
                        cfg: ObjectiveConfig = ObjectiveConfig(), extra_time: float = 0.0) -> list[Trajectory]:
    """Replay every task's subject, continuing ``extra_time`` seconds past its recorded exit.

    The extension lets a slower model still reach a gate that the recorded
    walker passed just before leaving the field of view.
    """
    if not tasks:
        return []
    dt = min(float(np.median(np.diff(t.subject.t))) for t in tasks)
    extra = int(np.ceil(max(extra_time, 0.0) / dt - 1e-6))
    batch = ReplayBatch(tasks, cfg, extra_steps=extra)
    res = batch.run(params, horizon_mask=np.ones_like(batch.step_mask))
    out = []
    for i, task in enumerate(tasks):
        n = task.steps + extra
        xy = res.positions[0, i, :n]
        z = np.full(n, task.subject.mean_height)
        out.append(Trajectory(task.subject.id, batch.times[i, :n], np.column_stack([xy, z])))
    return out


# -- two-sample KS ------------------------------------------------------------------------

@dataclass(frozen=True)
class KsResult:
    statistic: float
    pvalue: float
    n_a: int
    n_b: int
    note: str = ""

    def reject(self, alpha: float = 0.05) -> bool:
        return self.pvalue < alpha

    def to_text(self, alpha: float = 0.05) -> str:
        lines = [f"ks_statistic: {self.statistic:.6f}", f"p_value: {self.pvalue:.6f}",
                 f"n_a: {self.n_a}", f"n_b: {self.n_b}", f"alpha: {alpha:g}",
                 f"reject_same_distribution: {self.reject(alpha)}"]
        if self.note:
            lines.append(f"note: {self.note}")
        return "\n".join(lines) + "\n"


def ks_statistic(a, b) -> float:
    """sup |F_a - F_b| evaluated at every pooled sample point."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_two_sample(a, b) -> KsResult:
    """Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.

    The p-value is the Kolmogorov survival function at ``sqrt(n_e) * D``
    with ``n_e = n_a n_b / (n_a + n_b)``.
    """
    d = ks_statistic(a, b)
    na, nb = int(np.size(a)), int(np.size(b))
    ne = na * nb / (na + nb)
    p = float(kolmogorov(np.sqrt(ne) * d))
    note = ""
    if min(na, nb) < SMALL_SAMPLE:
        note = f"asymptotic p-value with min sample size {min(na, nb)} < {SMALL_SAMPLE}"
    return KsResult(d, min(max(p, 0.0), 1.0), na, nb, note)


def write_table(path, text: str, header: Sequence[str] = ()) -> None:
    pre = "".join(f"# {h}\n" for h in header)
    Path(path).write_text(pre + text, encoding="utf-8")
