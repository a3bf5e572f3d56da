"""Learning-curve construction, constrained power-law fitting, AUC.

The power law of practice predicts error rate a * n^b with a >= 0 and a
non-positive exponent b. Fitting exploits that for fixed b the optimal
intercept is closed-form, leaving a 1-D search over b in [-10, 0]; the
b = 0 boundary (constant fit) is always evaluated too, so the returned fit
never loses to the constant fallback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .types import KCLabel, OpportunityTable

B_LOWER = -10.0
GOLDEN_TOL = 1e-6
GRID_POINTS = 64
DEFAULT_MIN_SUPPORT = 5

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class CurvePoint:
    opportunity: int
    error_rate: float
    support: int

    def __post_init__(self):
        if self.opportunity < 1:
            raise ValueError("opportunity index is 1-based")
        if not 0.0 <= self.error_rate <= 1.0:
            raise ValueError(f"error_rate out of range: {self.error_rate}")
        if self.support < 1:
            raise ValueError("support must be positive")


@dataclass(frozen=True)
class LearningCurve:
    kc_id: str
    points: tuple[CurvePoint, ...]

    def __post_init__(self):
        opportunities = [p.opportunity for p in self.points]
        if opportunities != sorted(set(opportunities)):
            raise ValueError(f"curve {self.kc_id!r}: opportunities must strictly increase")


@dataclass(frozen=True)
class PowerLawFit:
    a: float
    b: float
    rmse: float
    r2: float

    def predict(self, n) -> np.ndarray:
        return self.a * np.power(np.asarray(n, dtype=float), self.b)


def empirical_curve(
    labels: list[KCLabel],
    kc_id: str,
    opportunities: OpportunityTable,
    min_support: int = DEFAULT_MIN_SUPPORT,
) -> LearningCurve:
    """Error rate by opportunity index n = T + 1 for one KC."""
    counts: dict[int, list[int]] = {}  # n -> [incorrect, total]
    for label in labels:
        if label.kc_id != kc_id:
            continue
        n = opportunities.get(label.student_id, label.problem_id, kc_id) + 1
        bucket = counts.setdefault(n, [0, 0])
        bucket[0] += 0 if label.correct else 1
        bucket[1] += 1
    if not counts:
        raise ValueError(f"no labels for KC {kc_id!r}")
    points = tuple(
        CurvePoint(opportunity=n, error_rate=inc / total, support=total)
        for n, (inc, total) in sorted(counts.items())
        if total >= min_support
    )
    return LearningCurve(kc_id=kc_id, points=points)


def _sse_for_b(n: np.ndarray, e: np.ndarray, b: float) -> tuple[float, float]:
    """Optimal intercept and SSE for a fixed exponent."""
    nb = np.power(n, b)
    denom = float(np.sum(nb * nb))
    a = max(0.0, float(np.sum(e * nb)) / denom)
    resid = e - a * nb
    return a, float(np.sum(resid * resid))


def _golden_section(n: np.ndarray, e: np.ndarray, lo: float, hi: float) -> float:
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc = _sse_for_b(n, e, c)[1]
    fd = _sse_for_b(n, e, d)[1]
    while b - a > GOLDEN_TOL:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = _sse_for_b(n, e, c)[1]
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = _sse_for_b(n, e, d)[1]
    return (a + b) / 2.0


def fit_power_law(curve: LearningCurve) -> PowerLawFit:
    """Least-squares a * n^b with a >= 0 and b <= 0.

    A coarse grid over b brackets the minimum for the golden-section refine;
    the constant fit at b = 0 competes and wins on equal SSE.
    """
    if len(curve.points) < 2:
        raise ValueError(f"curve {curve.kc_id!r}: need at least 2 points to fit")
    n = np.array([p.opportunity for p in curve.points], dtype=float)
    e = np.array([p.error_rate for p in curve.points], dtype=float)

    grid = np.linspace(B_LOWER, 0.0, GRID_POINTS)
    sses = [_sse_for_b(n, e, b)[1] for b in grid]
    best = int(np.argmin(sses))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, GRID_POINTS - 1)]
    b_star = _golden_section(n, e, lo, hi)
    a_star, sse_star = _sse_for_b(n, e, b_star)

    a_flat, sse_flat = _sse_for_b(n, e, 0.0)
    if sse_flat <= sse_star:
        a_star, b_star, sse_star = a_flat, 0.0, sse_flat

    rmse = math.sqrt(sse_star / len(n))
    ss_tot = float(np.sum((e - e.mean()) ** 2))
    if ss_tot == 0.0:
        # Unreachable in practice: the constant fit drives SSE to 0 whenever
        # the data has zero variance.
        r2 = 1.0 if sse_star < 1e-12 else 0.0
    else:
        r2 = 1.0 - sse_star / ss_tot
    return PowerLawFit(a=a_star, b=b_star, rmse=rmse, r2=r2)


def aggregate_curves(
    curves: list[LearningCurve], fits: list[PowerLawFit]
) -> list[tuple[int, float, float | None]]:
    """Per-opportunity unweighted means across KCs.

    Returns (n, mean empirical error, mean fitted error) rows; the empirical
    mean runs over KCs with a point at n, the fitted mean over KCs whose
    fitted domain [min opp, max opp] covers n.
    """
    if not curves or len(curves) != len(fits):
        raise ValueError("need one fit per curve and at least one curve")
    all_n = sorted({p.opportunity for c in curves for p in c.points})
    rows = []
    for n in all_n:
        empirical = [
            p.error_rate for c in curves for p in c.points if p.opportunity == n
        ]
        fitted = [
            float(fit.predict(n))
            for c, fit in zip(curves, fits)
            if c.points and c.points[0].opportunity <= n <= c.points[-1].opportunity
        ]
        rows.append((
            n,
            float(np.mean(empirical)),
            float(np.mean(fitted)) if fitted else None,
        ))
    return rows


def auc(scores: list[float], truth: list[bool]) -> float:
    """Mann-Whitney AUC: P(random positive outscores random negative), ties 0.5."""
    if len(scores) != len(truth):
        raise ValueError("scores and truth must align")
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    n_pos = int(truth.sum())
    n_neg = len(truth) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")

    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=float)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # average rank, 1-based
        i = j + 1

    rank_sum_pos = float(ranks[truth].sum())
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)
