"""Empirical loss distributions, percentile smoothing and per-attack thresholds.

Four smoothing methods turn a finite histogram of out-world losses into a
continuous percentile function:

* ``linear``: piecewise-linear interpolation between order statistics;
* ``logit``: Gaussian fit to logit-rescaled losses phi(l) = log(e^-l / (1 - e^-l));
* ``min``: the smaller of the two thresholds above;
* ``avg``: invert the average of the two smoothed CDFs.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Optional

import numpy as np
from scipy.special import erfc, ndtri

from .core import ValidationError, check_probability

LOGIT_CLAMP_LO = 1e-7
LOGIT_CLAMP_HI = 30.0


class SmoothingMethod(str, enum.Enum):
    LINEAR = "linear"
    LOGIT = "logit"
    MIN = "min"
    AVG = "avg"


# ---------------------------------------------------------------------------
# standard normal helpers


def norm_ppf(p: float) -> float:
    """Standard normal quantile."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability out of range: {p}")
    if p > 0.5:
        # 1 - p is exact here, so the quantile is exactly antisymmetric about 0.5
        return -float(ndtri(1.0 - p))
    return float(ndtri(p))


def norm_cdf(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * erfc(-x / math.sqrt(2))


# ---------------------------------------------------------------------------
# logit rescaling


def logit_rescale(loss):
    """phi(l) = log(e^-l / (1 - e^-l)) after clamping l into [1e-7, 30]."""
    l = np.clip(np.asarray(loss, dtype=np.float64), LOGIT_CLAMP_LO, LOGIT_CLAMP_HI)
    return -l - np.log(-np.expm1(-l))


def logit_rescale_inv(t):
    """Inverse of phi: l = log(1 + e^-t)."""
    t = np.asarray(t, dtype=np.float64)
    return np.logaddexp(0.0, -t)


# ---------------------------------------------------------------------------
# empirical distributions


@dataclass(frozen=True, eq=False)
class EmpiricalDist:
    """Sorted non-negative finite losses l_0 <= ... <= l_N."""

    losses: np.ndarray
    _mu: float = field(default=math.nan, repr=False)
    _sigma: float = field(default=math.nan, repr=False)

    def __post_init__(self):
        arr = np.sort(np.asarray(self.losses, dtype=np.float64).ravel())
        if arr.size == 0:
            raise ValidationError("empty loss distribution")
        if not np.isfinite(arr).all():
            raise ValidationError("loss distribution contains non-finite values")
        if arr[0] < 0:
            raise ValidationError("loss distribution contains negative values")
        arr.setflags(write=False)
        object.__setattr__(self, "losses", arr)
        phi = logit_rescale(arr)
        object.__setattr__(self, "_mu", float(np.mean(phi)))
        object.__setattr__(self, "_sigma", float(np.std(phi)))

    @property
    def N(self) -> int:
        return len(self.losses) - 1

    @property
    def logit_mean(self) -> float:
        return self._mu

    @property
    def logit_std(self) -> float:
        return self._sigma

    def mean(self) -> float:
        return float(np.mean(self.losses))

    def var(self) -> float:
        return float(np.var(self.losses))


def _need_two(dist: EmpiricalDist):
    if len(dist.losses) < 2:
        raise ValidationError("percentile needs at least 2 losses")


def percentile_linear(dist: EmpiricalDist, alpha: float) -> float:
    """p(a) = l_k (k + 1 - aN) + (aN - k) l_{k+1} with k = floor(aN)."""
    alpha = check_probability(alpha)
    _need_two(dist)
    l = dist.losses
    N = dist.N
    aN = alpha * N
    k = math.floor(aN)
    if k >= N:
        return float(l[N])
    # same value as the two-term form, but monotone in alpha under rounding
    return float(min(l[k] + (aN - k) * (l[k + 1] - l[k]), l[k + 1]))


def percentile_logit(dist: EmpiricalDist, alpha: float) -> float:
    """Loss whose rescaled value is the (1 - a)-quantile of the fitted Gaussian."""
    alpha = check_probability(alpha, open_interval=True)
    mu, sigma = dist.logit_mean, dist.logit_std
    if sigma == 0.0:
        return float(logit_rescale_inv(mu))
    return float(logit_rescale_inv(mu + sigma * norm_ppf(1.0 - alpha)))


def threshold_min(dist: EmpiricalDist, alpha: float) -> float:
    return min(percentile_linear(dist, alpha), percentile_logit(dist, alpha))


def cdf_linear(dist: EmpiricalDist, loss) -> np.ndarray:
    """Inverse of ``percentile_linear``: linear between (l_i, i/N), right-continuous at ties."""
    _need_two(dist)
    l = dist.losses
    N = dist.N
    x = np.asarray(loss, dtype=np.float64)
    k = np.searchsorted(l, x, side="right") - 1  # last index with l_k <= x
    out = np.where(k >= N, 1.0, 0.0)
    mid = (k >= 0) & (k < N)
    if np.any(mid):
        km = np.clip(k, 0, N - 1)
        lo, hi = l[km], l[km + 1]
        gap = hi - lo
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(gap > 0, (x - lo) / np.where(gap > 0, gap, 1.0), 0.0)
        out = np.where(mid, (km + frac) / N, out)
    return out if out.ndim else float(out)


def cdf_logit(dist: EmpiricalDist, loss) -> np.ndarray:
    """P(L <= loss) when phi(L) ~ N(mu, sigma^2); phi is decreasing."""
    mu, sigma = dist.logit_mean, dist.logit_std
    t = logit_rescale(loss)
    if sigma == 0.0:
        out = np.where(t <= mu, 1.0, 0.0)
    else:
        out = 0.5 * erfc((t - mu) / (sigma * math.sqrt(2)))
    return out if np.ndim(out) else float(out)


def confidence_avg(dist: EmpiricalDist, loss):
    """F(l) = (F_linear(l) + F_logit(l)) / 2."""
    return 0.5 * (np.asarray(cdf_linear(dist, loss)) + np.asarray(cdf_logit(dist, loss)))


def threshold_avg(dist: EmpiricalDist, alpha: float) -> float:
    """Invert ``confidence_avg`` by bisection down to float resolution."""
    alpha = check_probability(alpha, open_interval=True)
    lo = 0.0
    hi = max(float(dist.losses[-1]), LOGIT_CLAMP_HI)
    if confidence_avg(dist, lo) >= alpha:
        return lo
    if confidence_avg(dist, hi) < alpha:
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if confidence_avg(dist, mid) < alpha:
            lo = mid
        else:
            hi = mid
    # both ends bracket alpha; pick whichever lands closer
    return hi if abs(confidence_avg(dist, hi) - alpha) <= abs(confidence_avg(dist, lo) - alpha) else lo


def threshold(dist: EmpiricalDist, alpha: float, method=SmoothingMethod.LINEAR) -> float:
    method = SmoothingMethod(method)
    if method is SmoothingMethod.LINEAR:
        return percentile_linear(dist, alpha)
    if method is SmoothingMethod.LOGIT:
        return percentile_logit(dist, alpha)
    if method is SmoothingMethod.MIN:
        return threshold_min(dist, alpha)
    return threshold_avg(dist, alpha)


def membership_cdf(dist: EmpiricalDist, loss, method=SmoothingMethod.LINEAR):
    """Smallest alpha at which ``loss`` is called a member under ``method``.

    Sweeping a score of ``-membership_cdf`` reproduces the continuous
    alpha sweep of the threshold rule.
    """
    method = SmoothingMethod(method)
    if method is SmoothingMethod.LINEAR:
        return cdf_linear(dist, loss)
    if method is SmoothingMethod.LOGIT:
        return cdf_logit(dist, loss)
    if method is SmoothingMethod.MIN:
        return np.maximum(cdf_linear(dist, loss), cdf_logit(dist, loss))
    return confidence_avg(dist, loss)


# ---------------------------------------------------------------------------
# threshold functions


class AttackKind(str, enum.Enum):
    S = "S"
    P = "P"
    R = "R"
    D = "D"
    L = "L"


DEPENDENCY = {
    AttackKind.S: frozenset({"label"}),
    AttackKind.P: frozenset({"model"}),
    AttackKind.R: frozenset({"record"}),
    AttackKind.D: frozenset({"record", "model"}),
    AttackKind.L: frozenset({"record", "model"}),
}


@dataclass(frozen=True)
class Target:
    """What an attack sees about one challenge: the model handle, the record and its loss."""

    model_id: str
    record_id: int
    label: int
    loss: float


class MissingCalibration(KeyError):
    pass


@dataclass(frozen=True, eq=False)
class ThresholdFn:
    """Calibrated map (target, alpha) -> loss threshold for one attack kind.

    ``dists`` is keyed by the dependency slot of the kind: label (S), model
    id (P, or (model id, label) with per-label pooling), record id (R) and
    (model id, record id) for D and L.
    """

    kind: AttackKind
    method: SmoothingMethod
    dists: Mapping[Hashable, EmpiricalDist]
    per_label: bool = False

    @property
    def dependency(self) -> frozenset:
        return DEPENDENCY[self.kind]

    def key(self, target: Target) -> Hashable:
        k = self.kind
        if k is AttackKind.S:
            return int(target.label)
        if k is AttackKind.P:
            return (target.model_id, int(target.label)) if self.per_label else target.model_id
        if k is AttackKind.R:
            return int(target.record_id)
        return (target.model_id, int(target.record_id))

    def dist_for(self, target: Target) -> EmpiricalDist:
        key = self.key(target)
        try:
            return self.dists[key]
        except KeyError:
            raise MissingCalibration(f"attack {self.kind.value} has no calibration for {key!r}") from None

    def __call__(self, target: Target, alpha: float) -> float:
        return threshold(self.dist_for(target), alpha, self.method)

    def cdf(self, target: Target, loss: Optional[float] = None) -> float:
        return float(membership_cdf(self.dist_for(target), target.loss if loss is None else loss, self.method))

    def export_csv(self, path, alphas: Iterable[float], header_comment: str = ""):
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"#{header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["attack", "target", "alpha", "threshold"])
            for key in sorted(self.dists, key=repr):
                for a in alphas:
                    w.writerow([self.kind.value, _key_str(key), repr(float(a)),
                                repr(threshold(self.dists[key], a, self.method))])


def _key_str(key) -> str:
    return ":".join(map(str, key)) if isinstance(key, tuple) else str(key)


# calibration ---------------------------------------------------------------


def _dist(values) -> EmpiricalDist:
    return EmpiricalDist(np.asarray(values, dtype=np.float64))


def calibrate_S(shadow_set, method=SmoothingMethod.LINEAR) -> ThresholdFn:
    """Per-label pool of all shadow models' losses on non-member records of that label."""
    if not shadow_set.grouping:
        raise ValidationError("shadow set has no label grouping")
    values = shadow_set.matrix.values
    dists = {}
    for label, cols in shadow_set.grouping.items():
        if len(cols) == 0:
            raise ValidationError(f"missing shadow losses for label {label}")
        dists[int(label)] = _dist(values[:, list(cols)])
    return ThresholdFn(AttackKind.S, SmoothingMethod(method), dists)


def calibrate_P(population_sets, method=SmoothingMethod.LINEAR, per_label: bool = False) -> ThresholdFn:
    """One distribution per target model from its losses on population records."""
    dists = {}
    for ps in _as_list(population_sets):
        m = ps.matrix
        for r, model_id in enumerate(m.model_ids):
            if per_label:
                for label, cols in ps.grouping.items():
                    dists[(model_id, int(label))] = _dist(m.values[r, list(cols)])
            else:
                dists[model_id] = _dist(m.values[r])
    return ThresholdFn(AttackKind.P, SmoothingMethod(method), dists, per_label=per_label)


def calibrate_R(reference_set, method=SmoothingMethod.LINEAR) -> ThresholdFn:
    """One distribution per record from its losses across reference models."""
    m = reference_set.matrix
    dists = {rid: _dist(m.values[:, j]) for j, rid in enumerate(m.record_ids)}
    return ThresholdFn(AttackKind.R, SmoothingMethod(method), dists)


def _per_model_record(kind, sets_by_model, method) -> ThresholdFn:
    dists = {}
    for model_id, sets in sets_by_model.items():
        for ows in _as_list(sets):
            m = ows.matrix
            for j, rid in enumerate(m.record_ids):
                dists[(model_id, rid)] = _dist(m.values[:, j])
    return ThresholdFn(kind, SmoothingMethod(method), dists)


def calibrate_D(distilled_sets: Mapping[str, object], method=SmoothingMethod.LINEAR) -> ThresholdFn:
    """Distributions keyed by (target model id, record id) from each target's distilled models."""
    return _per_model_record(AttackKind.D, distilled_sets, method)


def calibrate_L(loo_sets: Mapping[str, object], method=SmoothingMethod.LINEAR) -> ThresholdFn:
    """Distributions keyed by (target model id, record id) from leave-one-out retrained models."""
    return _per_model_record(AttackKind.L, loo_sets, method)


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]
