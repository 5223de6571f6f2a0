"""Cross-sensor trajectory stitching.

Trajectory ends from one sensor are matched to trajectory starts from the
other by endpoint distance over (t, x, y, mean height), solved as a square
assignment problem with null matches. Matching is repeated with a growing
acceptance threshold so that unambiguous pairs are fixed first.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.interpolate import make_smoothing_spline
from scipy.optimize import minimize_scalar

from .core import Trajectory, TrajectorySet


@dataclass(frozen=True)
class StitchConfig:
    h_start: float = 3.0
    h_step: float = 3.0
    h_max: float = 23.0
    smoothing_enabled: bool = True
    output_rate: float = 30.0
    seam_window: float = 2.0
    smoothing_noise: float | None = None

    def __post_init__(self):
        if not 0 < self.h_start <= self.h_max:
            raise ValueError("need 0 < h_start <= h_max")
        if self.h_step <= 0:
            raise ValueError("h_step must be positive")

    def thresholds(self) -> list[float]:
        """``h_start, h_start + h_step, ...``, always ending exactly at ``h_max``."""
        hs = []
        h = self.h_start
        while h < self.h_max - 1e-12:
            hs.append(h)
            h += self.h_step
        hs.append(self.h_max)
        return hs


class EndpointFeature(NamedTuple):
    t: float
    x: float
    y: float
    zbar: float

    @classmethod
    def first(cls, tr: Trajectory) -> "EndpointFeature":
        return cls(tr.start_time, float(tr.xyz[0, 0]), float(tr.xyz[0, 1]), tr.mean_height)

    @classmethod
    def last(cls, tr: Trajectory) -> "EndpointFeature":
        return cls(tr.end_time, float(tr.xyz[-1, 0]), float(tr.xyz[-1, 1]), tr.mean_height)


class MatchRecord(NamedTuple):
    id_end: str
    id_start: str
    cost: float
    round_h: float
    accepted: bool


def endpoint_distance(a_end: EndpointFeature, b_start: EndpointFeature) -> float:
    # Seconds and meters are mixed on purpose: at walking speed they are comparable.
    return float(np.linalg.norm(np.subtract(a_end, b_start, dtype=float)))


def _feature_matrix(ending: Sequence[Trajectory], starting: Sequence[Trajectory]) -> np.ndarray:
    fe = np.array([EndpointFeature.last(tr) for tr in ending], dtype=float).reshape(-1, 4)
    fs = np.array([EndpointFeature.first(tr) for tr in starting], dtype=float).reshape(-1, 4)
    return np.sqrt(((fe[:, None, :] - fs[None, :, :]) ** 2).sum(axis=2))


def pad_square(real: np.ndarray) -> np.ndarray:
    """Pad a rectangular cost block to square with null entries ``max + 1``."""
    m, n = real.shape
    size = max(m, n)
    d0 = (float(real.max()) if real.size else 0.0) + 1.0
    out = np.full((size, size), d0)
    out[:m, :n] = real
    return out


def build_distance_matrix(ending: Sequence[Trajectory], starting: Sequence[Trajectory]) -> np.ndarray:
    """Square end-to-start distance matrix padded with null matches."""
    if not ending or not starting:
        raise ValueError("both trajectory lists must be non-empty")
    return pad_square(_feature_matrix(ending, starting))


def hungarian_assign(matrix) -> tuple[np.ndarray, float]:
    """Minimum-cost perfect matching of a square cost matrix.

    Shortest-augmenting-path form of the Hungarian method with row/column
    potentials, O(n^3). Returns ``col_of_row`` and the total cost.
    """
    c = np.asarray(matrix, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix must be finite")
    n = c.shape[0]
    if n == 0:
        return np.zeros(0, dtype=int), 0.0
    # 1-based bookkeeping: column 0 is a virtual column holding the row being inserted.
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of_col = np.zeros(n + 1, dtype=int)
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        row_of_col[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            free = ~used[1:]
            cur = c[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[row_of_col[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
    col_of_row = np.zeros(n, dtype=int)
    for j in range(1, n + 1):
        col_of_row[row_of_col[j] - 1] = j - 1
    return col_of_row, float(c[np.arange(n), col_of_row].sum())


# Above this length the dense eigendecomposition costs more than the library's banded search.
_EIGEN_GCV_MAX = 2000


def _penalty_matrix(t: np.ndarray) -> np.ndarray:
    """Matrix K with g @ K @ g the integrated squared second derivative of the
    natural cubic spline through values g at knots t."""
    h = np.diff(t)
    n = t.size
    i = np.arange(n - 2)
    Q = np.zeros((n, n - 2))
    Q[i, i] = 1.0 / h[:-1]
    Q[i + 1, i] = -1.0 / h[:-1] - 1.0 / h[1:]
    Q[i + 2, i] = 1.0 / h[1:]
    R = np.diag((h[:-1] + h[1:]) / 3.0) + np.diag(h[1:-1] / 6.0, 1) + np.diag(h[1:-1] / 6.0, -1)
    return Q @ np.linalg.solve(R, Q.T)


class _GcvSearch:
    """Generalised cross-validation over the penalty weight, sharing one
    eigendecomposition of the penalty between coordinates.

    Minimises the same criterion over the same bracket as the library's
    built-in search, in closed form per weight.
    """

    def __init__(self, t: np.ndarray):
        self.n = t.size
        mu, self.U = np.linalg.eigh(_penalty_matrix(t))
        self.mu = np.clip(mu, 0.0, None)

    def lam(self, y: np.ndarray) -> float:
        z2 = (self.U.T @ y) ** 2
        n, mu = self.n, self.mu

        def gcv(lam):
            shrink = lam * mu / (1.0 + lam * mu)
            return n * np.sum(shrink ** 2 * z2) / (n - np.sum(1.0 - shrink)) ** 2

        return float(minimize_scalar(gcv, bounds=(0, n), method="bounded").x)


def _budget_spline(t: np.ndarray, y: np.ndarray, budget: float | None, gcv: _GcvSearch | None = None):
    """Penalised cubic spline whose residual sum of squares is close to ``budget``.

    The penalty weight is found by bisection in log space; residuals grow
    monotonically with the weight. Without a budget the weight is chosen by
    generalised cross-validation.
    """
    if budget is None:
        return make_smoothing_spline(t, y, lam=None if gcv is None else gcv.lam(y))
    lo, hi = -10.0, 4.0
    if np.sum((y - y.mean()) ** 2) <= budget:
        return make_smoothing_spline(t, y, lam=10.0 ** hi)
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        rss = np.sum((make_smoothing_spline(t, y, lam=10.0 ** mid)(t) - y) ** 2)
        if rss > budget:
            hi = mid
        else:
            lo = mid
    return make_smoothing_spline(t, y, lam=10.0 ** lo)


def smooth_spline(traj: Trajectory, output_rate: float, noise: float | None = None) -> Trajectory:
    """Cubic smoothing-spline approximation of x(t), y(t) on a uniform grid.

    With ``noise`` given, the smoothing budget is ``len(traj) * noise**2``
    per coordinate; otherwise the smoothing weight comes from generalised
    cross-validation. The spline smooths the residual about a least-squares
    cubic, so cubic motion is reproduced exactly. z is set to the
    trajectory's mean height. Fewer than 5 points: returned as is.
    """
    if len(traj) < 5:
        return traj
    t = traj.t
    s = None if noise is None else len(t) * noise ** 2
    n = int(np.floor((t[-1] - t[0]) * output_rate + 1e-9))
    grid = t[0] + np.arange(n + 1) / output_rate
    if t[-1] - grid[-1] > 1e-9:
        grid = np.append(grid, t[-1])
    else:
        grid[-1] = t[-1]
    # The penalty shrinks curvature, so a least-squares cubic trend is taken
    # out first and only the residual is smoothed; cubics pass through exactly.
    tc, gc = t - t.mean(), grid - t.mean()
    gcv = _GcvSearch(t) if s is None and len(t) <= _EIGEN_GCV_MAX else None
    xy = []
    for k in (0, 1):
        trend = np.polynomial.Polynomial.fit(tc, traj.xyz[:, k], 3)
        xy.append(trend(gc) + _budget_spline(t, traj.xyz[:, k] - trend(tc), s, gcv)(grid))
    z = np.full(grid.size, traj.mean_height)
    return Trajectory(traj.id, grid, np.column_stack(xy + [z]))


def merge_pooled(parts: Sequence[Trajectory], new_id: str, dup_window: float = 1e-3) -> Trajectory:
    """Pool points of several trajectories in time order; near-simultaneous samples are averaged."""
    t = np.concatenate([p.t for p in parts])
    xyz = np.concatenate([p.xyz for p in parts])
    order = np.argsort(t, kind="stable")
    t, xyz = t[order], xyz[order]
    out_t, out_p = [], []
    i = 0
    while i < len(t):
        j = i + 1
        while j < len(t) and t[j] - t[i] <= dup_window:
            j += 1
        out_t.append(t[i:j].mean())
        out_p.append(xyz[i:j].mean(axis=0))
        i = j
    return Trajectory(new_id, out_t, out_p)


def _match_direction(ending: list[Trajectory], starting: list[Trajectory], cfg: StitchConfig,
                     end_used: set[str], start_used: set[str],
                     thresholds: Sequence[float]) -> list[MatchRecord]:
    """Iterative thresholded assignment of ``ending`` ends to ``starting`` starts."""
    records: list[MatchRecord] = []
    if not ending or not starting:
        return records
    full = _feature_matrix(ending, starting)
    t_end = np.array([tr.end_time for tr in ending])
    t_start = np.array([tr.start_time for tr in starting])
    # A pair overlapping in time by more than the seam window cannot be one walker.
    allowed = (t_end[:, None] - t_start[None, :]) <= cfg.seam_window
    for h in thresholds:
        rows = [i for i, tr in enumerate(ending) if tr.id not in end_used]
        cols = [j for j, tr in enumerate(starting) if tr.id not in start_used]
        if not rows or not cols:
            break
        sub = full[np.ix_(rows, cols)]
        ok = allowed[np.ix_(rows, cols)] & (sub < h)
        keep_r = [r for k, r in enumerate(rows) if ok[k].any()]
        keep_c = [c for k, c in enumerate(cols) if ok[:, k].any()]
        if not keep_r or not keep_c:
            continue
        block = full[np.ix_(keep_r, keep_c)]
        # Entries at or above h are not candidates this round; they count as null matches.
        mask = allowed[np.ix_(keep_r, keep_c)] & (block < h)
        real_max = float(block[mask].max())
        d0 = real_max + 1.0
        cost = pad_square(np.where(mask, block, d0))
        assignment, _ = hungarian_assign(cost)
        for r, c in enumerate(assignment):
            if r >= len(keep_r) or c >= len(keep_c) or not mask[r, c]:
                continue
            i, j = keep_r[r], keep_c[c]
            accepted = bool(block[r, c] < h)
            records.append(MatchRecord(ending[i].id, starting[j].id, float(block[r, c]), h, accepted))
            if accepted:
                end_used.add(ending[i].id)
                start_used.add(starting[j].id)
    return records


def _rekey(set_a: TrajectorySet, set_b: TrajectorySet) -> tuple[list[Trajectory], list[Trajectory]]:
    ids_a, ids_b = set(set_a.ids), set(set_b.ids)
    clash = ids_a & ids_b
    a = [tr.with_id(f"A/{tr.id}") if tr.id in clash else tr for tr in set_a]
    b = [tr.with_id(f"B/{tr.id}") if tr.id in clash else tr for tr in set_b]
    return a, b


def iterative_stitch(set_a: TrajectorySet, set_b: TrajectorySet,
                     cfg: StitchConfig = StitchConfig()) -> tuple[TrajectorySet, list[MatchRecord]]:
    """Stitch two sensors' trajectory sets.

    Both directions are matched: ends in ``set_a`` to starts in ``set_b``
    and ends in ``set_b`` to starts in ``set_a``. Accepted pairs are chained,
    pooled, and (optionally) spline-smoothed; everything else passes through.
    Report records are ``(id_end, id_start, cost, round_h, accepted)``.
    """
    a, b = _rekey(set_a, set_b)
    thresholds = cfg.thresholds()
    end_used: set[str] = set()
    start_used: set[str] = set()
    report = _match_direction(a, b, cfg, end_used, start_used, thresholds)
    report += _match_direction(b, a, cfg, end_used, start_used, thresholds)

    by_id = {tr.id: tr for tr in a + b}
    successor = {r.id_end: r.id_start for r in report if r.accepted}
    has_pred = set(successor.values())
    merged: list[Trajectory] = []
    seen: set[str] = set()
    for tr in a + b:
        if tr.id in has_pred or tr.id in seen:
            continue
        chain = [tr.id]
        while chain[-1] in successor and successor[chain[-1]] not in chain:
            chain.append(successor[chain[-1]])
        seen.update(chain)
        if len(chain) == 1:
            merged.append(tr)
            continue
        m = merge_pooled([by_id[k] for k in chain], "+".join(chain))
        if cfg.smoothing_enabled:
            m = smooth_spline(m, cfg.output_rate, cfg.smoothing_noise)
        merged.append(m)
    # Cycles (only possible with pathological input) are emitted unmerged.
    for tr in a + b:
        if tr.id not in seen:
            merged.append(tr)
    meta = dict(set_a.metadata)
    meta.update({"stitch.thresholds": repr(thresholds), "stitch.seam_window": repr(cfg.seam_window),
                 "stitch.smoothing": repr(cfg.smoothing_enabled)})
    return TrajectorySet(merged, frame_rate=set_a.frame_rate, metadata=meta), report


def stitch_sensors(sets: Sequence[TrajectorySet], cfg: StitchConfig = StitchConfig()
                   ) -> tuple[TrajectorySet, list[MatchRecord]]:
    """Stitch a row of sensors in order, then smooth every output trajectory once.

    Intermediate merges are pooled without smoothing so that each spline
    sees raw samples only.
    """
    if not sets:
        raise ValueError("need at least one trajectory set")
    raw = replace(cfg, smoothing_enabled=False)
    merged, report = sets[0], []
    for nxt in sets[1:]:
        merged, rep = iterative_stitch(merged, nxt, raw)
        report += rep
    if cfg.smoothing_enabled:
        merged = TrajectorySet([smooth_spline(tr, cfg.output_rate, cfg.smoothing_noise) for tr in merged],
                               frame_rate=cfg.output_rate, metadata=merged.metadata)
    return merged, report


def write_match_report(path, report: Sequence[MatchRecord], header: Sequence[str] = ()) -> None:
    lines = [f"# {h}" for h in header]
    lines.append("id_a id_b cost round_h status")
    for r in report:
        lines.append(f"{r.id_end} {r.id_start} {r.cost:.6f} {r.round_h:g} "
                     f"{'accepted' if r.accepted else 'rejected'}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_match_report(path) -> list[MatchRecord]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#") or line.startswith("id_a"):
            continue
        a, b, cost, h, status = line.split()
        out.append(MatchRecord(a, b, float(cost), float(h), status == "accepted"))
    return out
