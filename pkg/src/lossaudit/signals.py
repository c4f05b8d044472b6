"""Builders for the out-world loss samples that each attack calibrates on."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import csvio
from .core import Dataset, SeedSpec, SignalMatrix, ValidationError
from .synth import (PopulationPool, ToyModel, TrainConfig, distill_many, loss_table, losses,
                    sample_dataset, train_many)


class OutWorldKind(str, enum.Enum):
    SHADOW = "Shadow"
    POPULATION = "Population"
    REFERENCE = "Reference"
    DISTILLED = "Distilled"
    LEAVE_ONE_OUT = "LeaveOneOut"
    EXTERNAL = "External"


@dataclass
class OutWorldSet:
    kind: OutWorldKind
    matrix: SignalMatrix
    datasets: dict = field(default_factory=dict)  # model id -> training Dataset
    seeds: dict = field(default_factory=dict)  # model id -> SeedSpec
    grouping: dict = field(default_factory=dict)  # label -> column indices
    labels: Optional[list] = None  # per-column record labels

    @property
    def fingerprints(self) -> dict:
        return {k: ds.fingerprint for k, ds in self.datasets.items()}

    def export(self, path, config_hash: str = ""):
        return csvio.write_matrix(path, self.matrix, self.kind.value, config_hash=config_hash,
                                  labels=self.labels)


def _grouping(labels) -> dict:
    out: dict = {}
    for j, y in enumerate(labels):
        out.setdefault(int(y), []).append(j)
    return out


def draw_per_class(pool: PopulationPool, m_per_class: int, seed: SeedSpec, exclude=()) -> np.ndarray:
    """``m_per_class`` distinct ids of every label, none of them in ``exclude``."""
    excluded = set(int(i) for i in exclude)
    out = []
    for y in range(pool.num_classes):
        cand = np.array([i for i in pool.ids_with_label(y) if int(i) not in excluded], dtype=np.int64)
        if len(cand) < m_per_class:
            raise ValidationError(f"insufficient pool: label {y} has {len(cand)} records, need {m_per_class}")
        out.append(seed.child("label", y).rng().choice(cand, size=m_per_class, replace=False))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def _train_role(pool, role: str, n_models: int, n: int, config: TrainConfig, root_seed: SeedSpec,
                exclude=()):
    seeds = [root_seed.child(role, i) for i in range(n_models)]
    datasets = [sample_dataset(pool, n, s.child("data"), exclude=exclude) for s in seeds]
    models = train_many(pool, datasets, [config.with_seed(s.child("train")) for s in seeds])
    return seeds, datasets, models


def build_shadow(pool: PopulationPool, n: int, n_models: int, config: TrainConfig, root_seed: SeedSpec,
                 eval_records, exclude=()) -> OutWorldSet:
    """Shadow models on fresh population datasets, scored on held-out population records.

    ``eval_records`` is either a per-class count (drawn with ``root_seed``)
    or explicit record ids. Evaluation records are excluded from every
    shadow training set, so all recorded losses are non-member losses.
    """
    if n_models < 1:
        raise ValueError("n_models must be at least 1")
    if isinstance(eval_records, (int, np.integer)):
        eval_ids = draw_per_class(pool, int(eval_records), root_seed.child("shadow-eval"), exclude)
    else:
        eval_ids = np.asarray(list(eval_records), dtype=np.int64)
    labels = pool.y(eval_ids)
    grouping = _grouping(labels)
    for y in range(pool.num_classes):
        if y not in grouping:
            raise ValidationError(f"no shadow evaluation records with label {y}")
    seeds, datasets, models = _train_role(pool, "shadow", n_models, n, config, root_seed,
                                          exclude=set(map(int, eval_ids)) | set(map(int, exclude)))
    ids = [f"shadow-{i}" for i in range(n_models)]
    values = loss_table(models, pool.X(eval_ids), labels)
    return OutWorldSet(OutWorldKind.SHADOW, SignalMatrix(ids, eval_ids.tolist(), values).check(),
                       dict(zip(ids, datasets)), dict(zip(ids, seeds)), grouping, labels.tolist())


def build_population(target_model: ToyModel, pool: PopulationPool, m_per_class: int, seed: SeedSpec,
                     exclude=(), model_id: Optional[str] = None) -> OutWorldSet:
    """Losses of the target model on ``m_per_class`` fresh population records per class."""
    ids = draw_per_class(pool, m_per_class, seed, exclude)
    labels = pool.y(ids)
    mid = model_id or target_model.fingerprint
    values = losses(target_model, pool.X(ids), labels)[None, :]
    return OutWorldSet(OutWorldKind.POPULATION, SignalMatrix([mid], ids.tolist(), values).check(),
                       grouping=_grouping(labels), labels=labels.tolist())


def build_reference(pool: PopulationPool, target_records, n_models: int, n: int, config: TrainConfig,
                    root_seed: SeedSpec) -> OutWorldSet:
    """Reference models on population datasets that never contain any target record."""
    if n_models < 1:
        raise ValueError("n_models must be at least 1")
    targets = np.atleast_1d(np.asarray(target_records, dtype=np.int64))
    seeds, datasets, models = _train_role(pool, "reference", n_models, n, config, root_seed,
                                          exclude=targets.tolist())
    ids = [f"reference-{i}" for i in range(n_models)]
    values = loss_table(models, pool.X(targets), pool.y(targets))
    return OutWorldSet(OutWorldKind.REFERENCE, SignalMatrix(ids, targets.tolist(), values).check(),
                       dict(zip(ids, datasets)), dict(zip(ids, seeds)), labels=pool.y(targets).tolist())


def build_distilled(target_model: ToyModel, pool: PopulationPool, target_records, n_models: int, n: int,
                    config: TrainConfig, root_seed: SeedSpec, target_id: Optional[str] = None) -> OutWorldSet:
    """Students distilled from the target on fresh soft-labelled draws that exclude the target records."""
    if n_models < 1:
        raise ValueError("n_models must be at least 1")
    targets = np.atleast_1d(np.asarray(target_records, dtype=np.int64))
    seeds = [root_seed.child("distilled", i) for i in range(n_models)]
    models, datasets = distill_many(target_model, pool, n, config, seeds, exclude=targets.tolist())
    tag = target_id or target_model.fingerprint
    ids = [f"distilled-{tag}-{i}" for i in range(n_models)]
    values = loss_table(models, pool.X(targets), pool.y(targets))
    return OutWorldSet(OutWorldKind.DISTILLED, SignalMatrix(ids, targets.tolist(), values).check(),
                       dict(zip(ids, datasets)), dict(zip(ids, seeds)), labels=pool.y(targets).tolist())


def build_leave_one_out(pool: PopulationPool, fixed_dataset: Dataset, target_record: int, n_models: int,
                        config: TrainConfig, root_seed: SeedSpec) -> OutWorldSet:
    """Models retrained on exactly ``fixed_dataset`` minus the target; only training seeds vary."""
    if n_models < 1:
        raise ValueError("n_models must be at least 1")
    z = int(target_record)
    base = fixed_dataset.without(z)
    seeds = [root_seed.child("loo", i) for i in range(n_models)]
    models = train_many(pool, [base] * n_models, [config.with_seed(s.child("train")) for s in seeds])
    ids = [f"loo-{z}-{i}" for i in range(n_models)]
    values = loss_table(models, pool.X([z]), pool.y([z]))
    out = OutWorldSet(OutWorldKind.LEAVE_ONE_OUT, SignalMatrix(ids, [z], values).check(),
                      {i: base for i in ids}, dict(zip(ids, seeds)), labels=pool.y([z]).tolist())
    out.matrix.meta["target_in_fixed_dataset"] = z in fixed_dataset
    return out


def ingest(path) -> OutWorldSet:
    """Load an externally produced loss matrix; the kind comes from its first line."""
    matrix, kind, meta = csvio.read_matrix(path)
    labels = meta.get("labels")
    return OutWorldSet(OutWorldKind(kind), matrix, grouping=_grouping(labels) if labels else {},
                       labels=labels)
