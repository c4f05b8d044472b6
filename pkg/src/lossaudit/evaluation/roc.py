"""ROC curves, AUC and operating-point lookups."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from ..core import ValidationError
from ..thresholds import Target, ThresholdFn


def default_alpha_grid() -> np.ndarray:
    """{0} U 25 geometric points in [1e-4, 1] U multiples of 0.05."""
    pts = np.concatenate([[0.0], np.geomspace(1e-4, 1.0, 25), np.round(np.arange(1, 21) * 0.05, 10)])
    return np.unique(np.clip(pts, 0.0, 1.0))


DEFAULT_ALPHA_GRID = default_alpha_grid()


def trapezoid(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


@dataclass(frozen=True, eq=False)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    provenance: str  # "alpha-sweep" or "score-sweep"
    alphas: Optional[np.ndarray] = None

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def rows(self):
        alphas = self.alphas if self.alphas is not None else [float("nan")] * len(self.fpr)
        return [(float(a), float(f), float(t), self.auc) for a, f, t in zip(alphas, self.fpr, self.tpr)]


def _curve(fpr, tpr, provenance, alphas=None) -> RocCurve:
    fpr = np.asarray(fpr, dtype=np.float64)
    tpr = np.asarray(tpr, dtype=np.float64)
    return RocCurve(fpr, tpr, trapezoid(fpr, tpr), provenance,
                    None if alphas is None else np.asarray(alphas, dtype=np.float64))


def _truths(truths) -> np.ndarray:
    t = np.asarray(truths).astype(bool)
    if t.all() or not t.any():
        raise ValidationError("ROC needs both member and non-member examples")
    return t


def roc_alpha_sweep(tfn: ThresholdFn, targets: Sequence[Target], truths, alpha_grid=DEFAULT_ALPHA_GRID) -> RocCurve:
    """One (FPR, TPR) point per interior alpha, closed with (0, 0) and (1, 1).

    Grid entries 0 and 1 coincide with the closing points and are not
    evaluated separately.
    """
    t = _truths(truths)
    grid = np.asarray(alpha_grid, dtype=np.float64)
    if np.any(np.diff(grid) < 0) or grid.min(initial=0) < 0 or grid.max(initial=0) > 1:
        raise ValueError("alpha grid must be sorted within [0, 1]")
    loss_vals = np.array([tg.loss for tg in targets])
    fprs, tprs, alphas = [0.0], [0.0], [0.0]
    for a in grid:
        if a <= 0.0 or a >= 1.0:
            continue
        thr = np.array([tfn(tg, a) for tg in targets])
        pred = loss_vals <= thr
        fprs.append(pred[~t].mean())
        tprs.append(pred[t].mean())
        alphas.append(a)
    fprs.append(1.0)
    tprs.append(1.0)
    alphas.append(1.0)
    return _curve(fprs, tprs, "alpha-sweep", alphas)


def roc_score_sweep(scores, truths) -> RocCurve:
    """Threshold the score at every distinct value; higher score means 'member'."""
    t = _truths(truths)
    s = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    t_sorted = t[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    tp = np.cumsum(t_sorted)[ends]
    fp = np.cumsum(~t_sorted)[ends]
    P, N = t.sum(), (~t).sum()
    return _curve(np.r_[0.0, fp / N], np.r_[0.0, tp / P], "score-sweep")


def pairwise_auc(scores, truths) -> float:
    """Mann-Whitney statistic via ranks; ties count one half."""
    t = _truths(truths)
    s = np.asarray(scores, dtype=np.float64)
    ranks = rankdata(s)
    P, N = t.sum(), (~t).sum()
    return float((ranks[t].sum() - P * (P + 1) / 2.0) / (P * N))


def tpr_at_fpr(curve: RocCurve, fpr: float) -> float:
    """Upper envelope of the curve at ``fpr``, linear between points."""
    x, y = curve.fpr, curve.tpr
    if not 0 <= fpr <= 1:
        raise ValueError("fpr must lie in [0, 1]")
    right = int(np.searchsorted(x, fpr, side="right"))
    left = right - 1
    if left < 0:
        return float(y[0])
    if x[left] == fpr or right >= len(x):
        return float(y[left])
    w = (fpr - x[left]) / (x[right] - x[left])
    return float(y[left] + w * (y[right] - y[left]))


def fpr_at_tpr(curve: RocCurve, tpr: float) -> float:
    """Smallest FPR reaching ``tpr``, linear between points."""
    x, y = curve.fpr, curve.tpr
    if not 0 <= tpr <= 1:
        raise ValueError("tpr must lie in [0, 1]")
    i = int(np.searchsorted(y, tpr, side="left"))
    if i >= len(y):
        return float(x[-1])
    if y[i] == tpr or i == 0:
        return float(x[i])
    w = (tpr - y[i - 1]) / (y[i] - y[i - 1])
    return float(x[i - 1] + w * (x[i] - x[i - 1]))
