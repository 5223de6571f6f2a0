"""Trajectory-level tracking and stitching quality metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .core import Trajectory, TrajectorySet
from .stitching import MatchRecord, hungarian_assign


def frechet_xy(a: np.ndarray, b: np.ndarray) -> float:
    """Discrete Fréchet distance between two point sequences.

    Dynamic programme over monotone couplings, swept one anti-diagonal at
    a time so each sweep is a single vectorised step.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        raise ValueError("Fréchet distance needs non-empty sequences")
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    # C[i+1, j+1] holds the coupling value for prefixes a[:i+1], b[:j+1].
    C = np.full((n + 1, m + 1), np.inf)
    C[0, 0] = -np.inf
    for k in range(n + m - 1):
        i = np.arange(max(0, k - m + 1), min(k, n - 1) + 1)
        j = k - i
        prev = np.minimum(np.minimum(C[i, j + 1], C[i + 1, j]), C[i, j])
        C[i + 1, j + 1] = np.maximum(d[i, j], prev)
    return float(C[n, m])


def discrete_frechet(a: Trajectory, b: Trajectory) -> float:
    """Discrete Fréchet distance between two trajectories in the (x, y) plane."""
    return frechet_xy(a.xy, b.xy)


class MatchedPair(NamedTuple):
    auto_id: str
    truth_id: str
    frechet: float
    steps: int


@dataclass
class EvalReport:
    motp: float
    pdr: float
    true_positives: int
    false_negatives: int
    false_positives: int
    pairs: list[MatchedPair] = field(default_factory=list)
    max_dist: float = 0.5

    def __post_init__(self):
        if min(self.true_positives, self.false_negatives, self.false_positives) < 0:
            raise ValueError("counts must be non-negative")

    def to_text(self) -> str:
        lines = [
            f"motp_m: {self.motp:.6f}",
            f"pdr: {self.pdr:.6f}",
            f"true_positives: {self.true_positives}",
            f"false_negatives: {self.false_negatives}",
            f"false_positives: {self.false_positives}",
            f"max_dist_m: {self.max_dist:g}",
            "motp_weighting: per-pair Fréchet distance weighted by matched time steps",
            "",
            "auto_id truth_id frechet_m steps",
        ]
        lines += [f"{p.auto_id} {p.truth_id} {p.frechet:.6f} {p.steps}" for p in self.pairs]
        return "\n".join(lines) + "\n"

    def write(self, path, header: Sequence[str] = ()) -> None:
        pre = "".join(f"# {h}\n" for h in header)
        Path(path).write_text(pre + self.to_text(), encoding="utf-8")


def overlap_steps(a: Trajectory, b: Trajectory) -> int:
    """Number of ``b`` timestamps falling inside the time span of ``a``."""
    lo, hi = max(a.start_time, b.start_time), min(a.end_time, b.end_time)
    if hi < lo:
        return 0
    eps = 1e-9
    return int(np.count_nonzero((b.t >= lo - eps) & (b.t <= hi + eps)))


def overlap_window(a: Trajectory, b: Trajectory, eps: float = 1e-9):
    """Samples of ``a`` and ``b`` inside their common time span, or ``None``."""
    lo, hi = max(a.start_time, b.start_time), min(a.end_time, b.end_time)
    if hi < lo:
        return None
    ma = (a.t >= lo - eps) & (a.t <= hi + eps)
    mb = (b.t >= lo - eps) & (b.t <= hi + eps)
    if not ma.any() or not mb.any():
        return None
    return a.xy[ma], b.xy[mb]


def matched_frechet(a: Trajectory, b: Trajectory) -> float:
    """Fréchet distance restricted to the time span both trajectories cover.

    Coverage differences at the ends are counted by PDR, not by precision.
    """
    w = overlap_window(a, b)
    return np.inf if w is None else frechet_xy(*w)


def frechet_matrix(auto: Sequence[Trajectory], truth: Sequence[Trajectory],
                   max_dist: float) -> np.ndarray:
    """Overlap-window Fréchet distances between pairs; ``inf`` without overlap.

    Pairs whose window endpoint distances already exceed ``max_dist`` are
    skipped, since Fréchet is bounded below by both endpoint distances.
    """
    out = np.full((len(auto), len(truth)), np.inf)
    for i, a in enumerate(auto):
        for j, g in enumerate(truth):
            w = overlap_window(a, g)
            if w is None:
                continue
            pa, pg = w
            lb = max(np.linalg.norm(pa[0] - pg[0]), np.linalg.norm(pa[-1] - pg[-1]))
            if lb > max_dist:
                continue
            out[i, j] = frechet_xy(pa, pg)
    return out


def match_to_ground_truth(auto: TrajectorySet, truth: TrajectorySet, max_dist: float = 0.5):
    """Optimal one-to-one auto/truth pairing under summed Fréchet distance.

    Pairs above ``max_dist`` (or without temporal overlap) are forbidden.
    Returns ``(pairs, unmatched_auto_ids, unmatched_truth_ids)``.
    """
    A, G = list(auto), list(truth)
    if not A or not G:
        return [], [a.id for a in A], [g.id for g in G]
    F = frechet_matrix(A, G, max_dist)
    allowed = F <= max_dist
    size = max(len(A), len(G))
    finite = F[allowed]
    big = (finite.sum() if finite.size else 0.0) + 1.0
    # Forbidden and padding entries cost more than any feasible total.
    cost = np.full((size, size), big)
    cost[:len(A), :len(G)] = np.where(allowed, F, big)
    assign, _ = hungarian_assign(cost)
    pairs = []
    matched_a, matched_g = set(), set()
    for i, j in enumerate(assign):
        if i < len(A) and j < len(G) and allowed[i, j]:
            pairs.append(MatchedPair(A[i].id, G[j].id, float(F[i, j]), overlap_steps(A[i], G[j])))
            matched_a.add(i)
            matched_g.add(j)
    fp = [A[i].id for i in range(len(A)) if i not in matched_a]
    fn = [G[j].id for j in range(len(G)) if j not in matched_g]
    return pairs, fp, fn


def motp(pairs: Iterable[tuple[float, int]]) -> float:
    """Sum of per-step match distances over the total number of matches.

    ``pairs`` yields ``(distance, steps)``: each pair contributes its
    distance once for every time step at which it is matched.
    """
    num = den = 0.0
    for dist, steps in pairs:
        num += dist * steps
        den += steps
    if den <= 0:
        raise ValueError("MOTP is undefined without matches")
    return num / den


def pdr(tp: int, fn: int) -> float:
    if tp < 0 or fn < 0:
        raise ValueError("counts must be non-negative")
    if tp + fn == 0:
        raise ValueError("PDR is undefined when TP + FN = 0")
    return tp / (tp + fn)


def evaluate(auto: TrajectorySet, truth: TrajectorySet, max_dist: float = 0.5) -> EvalReport:
    pairs, fp, fn = match_to_ground_truth(auto, truth, max_dist)
    weighted = [(p.frechet, p.steps) for p in pairs if p.steps > 0]
    q_motp = motp(weighted) if weighted else float("nan")
    tp = len(pairs)
    q_pdr = pdr(tp, len(fn)) if tp + len(fn) else float("nan")
    return EvalReport(q_motp, q_pdr, tp, len(fn), len(fp), pairs, max_dist)


def stitch_tpr(report: Iterable[MatchRecord], truth_pairs: Iterable[tuple[str, str]]) -> float:
    """Fraction of true (end, start) pairs reproduced by accepted matches.

    Pairs are compared without regard to direction.
    """
    truth = {frozenset(p) for p in truth_pairs}
    if not truth:
        raise ValueError("truth pairs must be non-empty")
    found = {frozenset((r.id_end, r.id_start)) for r in report if r.accepted}
    return len(truth & found) / len(truth)
