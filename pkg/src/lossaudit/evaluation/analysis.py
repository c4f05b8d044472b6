"""Agreement tables, vulnerability partitions and per-record LOO analyses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from ..core import Dataset, Record, SeedSpec, SignalMatrix, ValidationError
from ..signals import build_leave_one_out
from ..synth import PopulationPool, ToyModel, TrainConfig, losses, penultimate, train_many
from ..thresholds import AttackKind, EmpiricalDist, SmoothingMethod, Target, ThresholdFn
from .roc import DEFAULT_ALPHA_GRID, RocCurve, roc_alpha_sweep


def agreement(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValidationError(f"prediction vectors differ in length: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValidationError("empty prediction vectors")
    return float(np.mean(a.astype(bool) == b.astype(bool)))


@dataclass(frozen=True, eq=False)
class AgreementTable:
    names: list
    rates: np.ndarray
    split: str = "train"

    def rate(self, a: str, b: str) -> float:
        return float(self.rates[self.names.index(a), self.names.index(b)])

    def rows(self):
        return [[n] + [float(v) for v in row] for n, row in zip(self.names, self.rates)]


def agreement_table(predictions: Mapping[str, Sequence[int]], split: str = "train") -> AgreementTable:
    """Pairwise agreement over named prediction vectors (include 'GT' for ground truth)."""
    names = list(predictions)
    rates = np.array([[agreement(predictions[a], predictions[b]) for b in names] for a in names])
    return AgreementTable(names, rates, split)


@dataclass(frozen=True)
class VulnPartition:
    all_correct: frozenset
    r_correct: frozenset
    sp_correct: frozenset
    random_baseline: tuple
    majority: float


def partition_records(member_predictions: Mapping[str, np.ndarray], record_ids: Sequence[int],
                      majority: float = 0.8, include_d: bool = False, n_random: int = 10,
                      seed: SeedSpec = SeedSpec(0)) -> VulnPartition:
    """Split training records by which attacks flag them on most target models.

    ``member_predictions[kind]`` is a (models x records) 0/1 array of member
    calls on records that are all members. A record is "flagged" by an attack
    when called member on at least ``majority`` of the models and "missed"
    when called member on at most ``1 - majority`` of them.
    """
    if not 0.5 < majority <= 1.0:
        raise ValueError("majority must lie in (0.5, 1]")
    preds = {k: np.asarray(v, dtype=float) for k, v in member_predictions.items()}
    for k in ("S", "P", "R"):
        if k not in preds:
            raise ValidationError(f"missing predictions for attack {k}")
    if preds["S"].ndim != 2 or preds["S"].shape[0] < 1:
        raise ValidationError("empty model set")
    rate = {k: v.mean(axis=0) for k, v in preds.items()}
    eps = 1e-12
    hit = {k: r >= majority - eps for k, r in rate.items()}
    miss = {k: r <= 1.0 - majority + eps for k, r in rate.items()}
    ids = np.asarray(record_ids)
    all_mask = hit["S"] & hit["P"] & hit["R"]
    if include_d:
        all_mask &= hit["D"]
    r_mask = hit["R"] & miss["S"] & miss["P"]
    sp_mask = hit["S"] & hit["P"] & miss["R"]
    k = min(n_random, len(ids))
    rnd = tuple(int(i) for i in seed.rng().choice(ids, size=k, replace=False))
    return VulnPartition(frozenset(map(int, ids[all_mask])), frozenset(map(int, ids[r_mask])),
                         frozenset(map(int, ids[sp_mask])), rnd, majority)


def loo_vulnerability(pool: PopulationPool, fixed_dataset: Dataset, record: int, n_models: int,
                      config: TrainConfig, seed: SeedSpec, alpha_grid=DEFAULT_ALPHA_GRID,
                      method=SmoothingMethod.LINEAR) -> RocCurve:
    """Attack L on ``n_models`` models trained with and ``n_models`` without ``record``.

    Thresholds come from the record's losses on the without-models; the ROC
    is taken over the combined with/without population.
    """
    z = int(record)
    if z not in fixed_dataset:
        raise ValidationError(f"record {z} is not in the fixed dataset")
    with_seeds = [seed.child("with", i).child("train") for i in range(n_models)]
    with_models = train_many(pool, [fixed_dataset] * n_models, [config.with_seed(s) for s in with_seeds])
    without = build_leave_one_out(pool, fixed_dataset, z, n_models, config, seed.child("without"))
    with_losses = np.array([float(losses(m, pool.X([z]), pool.y([z]))[0]) for m in with_models])
    without_losses = without.matrix.values[:, 0]
    label = int(pool.labels[z])
    targets = ([Target(f"with-{i}", z, label, float(l)) for i, l in enumerate(with_losses)]
               + [Target(mid, z, label, float(l)) for mid, l in zip(without.matrix.model_ids, without_losses)])
    dist = EmpiricalDist(without_losses)
    tfn = ThresholdFn(AttackKind.L, SmoothingMethod(method), {(t.model_id, z): dist for t in targets})
    truths = np.r_[np.ones(n_models, dtype=bool), np.zeros(n_models, dtype=bool)]
    return roc_alpha_sweep(tfn, targets, truths, alpha_grid)


@dataclass(frozen=True, eq=False)
class LossHistogram:
    dist: EmpiricalDist
    mean: float
    var: float

    @property
    def losses(self) -> np.ndarray:
        return self.dist.losses


def loss_histogram(matrix: SignalMatrix, record_ids: Sequence[int],
                   model_ids: Optional[Sequence[str]] = None) -> LossHistogram:
    """Pool the losses of ``record_ids`` across the chosen rows of ``matrix``."""
    if len(record_ids) == 0:
        raise ValidationError("empty record set")
    cols = [matrix.record_ids.index(int(r)) for r in record_ids]
    rows = range(len(matrix.model_ids)) if model_ids is None else [matrix.model_ids.index(m) for m in model_ids]
    vals = matrix.values[np.ix_(list(rows), cols)].ravel()
    dist = EmpiricalDist(vals)
    return LossHistogram(dist, float(np.mean(vals)), float(np.var(vals)))


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return float("inf")
    return float(1.0 - np.dot(u, v) / (nu * nv))


def latent_neighbors(record: Record, candidates: Sequence[Record], model: ToyModel, k: int) -> list[int]:
    """The ``k`` candidates closest to ``record`` in cosine distance of hidden-layer embeddings.

    Ties go to the smaller record id; zero-norm embeddings rank last.
    """
    q = penultimate(model, record)
    scored = []
    for c in candidates:
        if c.id == record.id:
            continue
        scored.append((cosine_distance(q, penultimate(model, c)), c.id))
    scored.sort()
    return [rid for _, rid in scored[:k]]


def effective_fpr(tfn: ThresholdFn, nonmember_targets: Sequence[Target], alpha: float) -> float:
    """Observed FPR of the attack on held-out non-member targets at ``alpha``."""
    if not nonmember_targets:
        raise ValidationError("no non-member targets")
    return float(np.mean([t.loss <= tfn(t, alpha) for t in nonmember_targets]))
