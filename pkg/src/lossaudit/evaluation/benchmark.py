"""End-to-end audit of target models with all four calibrated attacks.

An audit set of ``2n`` population records is drawn once. Each target model
trains on ``n`` of them (a fresh half per target, or one shared half for
every target); the rest of the audit set are its non-members. Shadow,
population, reference and distillation data never touch the audit set, so
every out-world loss is a genuine non-member loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..attacks import membership_scores
from ..core import Dataset, SeedSpec, SignalMatrix
from ..signals import build_distilled, build_population, build_reference, build_shadow
from ..synth import PopulationPool, TrainConfig, gen_population, loss_table, train_many
from ..thresholds import SmoothingMethod, Target, calibrate_D, calibrate_P, calibrate_R, calibrate_S
from .roc import RocCurve, roc_score_sweep

ATTACKS = ("S", "P", "R", "D")


@dataclass(frozen=True)
class BenchmarkConfig:
    dim: int = 16
    num_classes: int = 4
    pool_size: int = 20_000
    class_scale: float = 1.0
    separation: float = 1.0
    n: int = 64
    train: TrainConfig = TrainConfig(hidden_width=32, epochs=200, batch_size=16, learning_rate=0.1)
    n_targets: int = 10
    n_shadow: int = 200
    n_reference: int = 200
    n_distilled: int = 200
    m_per_class: int = 100
    shadow_eval_per_class: int = 50
    shared_dataset: bool = False
    attacks: tuple = ATTACKS
    method: SmoothingMethod = SmoothingMethod.LINEAR
    seed: SeedSpec = SeedSpec(0)

    def with_seed(self, seed: SeedSpec) -> "BenchmarkConfig":
        return replace(self, seed=seed)


@dataclass(eq=False)
class AuditRun:
    config: BenchmarkConfig
    pool: PopulationPool
    audit_ids: np.ndarray
    target_ids: list
    target_datasets: list
    target_models: list
    targets: list  # Target per (target model, audit record), model-major
    truths: np.ndarray
    tfns: dict = field(default_factory=dict)
    sets: dict = field(default_factory=dict)

    def scores(self, kind: str) -> np.ndarray:
        return membership_scores(self.tfns[kind], self.targets)

    def roc(self, kind: str) -> RocCurve:
        return roc_score_sweep(self.scores(kind), self.truths)

    def aucs(self) -> dict:
        return {k: self.roc(k).auc for k in self.tfns}

    def target_matrix(self) -> np.ndarray:
        """(targets x audit records) losses."""
        return np.array([t.loss for t in self.targets]).reshape(len(self.target_models), -1)


def train_targets(cfg: BenchmarkConfig, pool: PopulationPool):
    """Draw the audit set and train the target models; returns (audit ids, target ids, datasets, models)."""
    root = cfg.seed
    audit = root.child("audit").rng().choice(pool.size, size=2 * cfg.n, replace=False).astype(np.int64)
    halves = []
    for i in range(cfg.n_targets):
        s = root.child("member-split", 0 if cfg.shared_dataset else i)
        halves.append(np.sort(s.rng().choice(audit, size=cfg.n, replace=False)))
    datasets = [Dataset(tuple(int(r) for r in h), pool.ref) for h in halves]
    tconfigs = [cfg.train.with_seed(root.child("target", i).child("train")) for i in range(cfg.n_targets)]
    models = train_many(pool, datasets, tconfigs)
    return audit, [f"target-{i}" for i in range(cfg.n_targets)], datasets, models


def target_signals(pool: PopulationPool, audit, target_ids, datasets, models) -> SignalMatrix:
    """Losses of every target on every audit record, with the true membership bits."""
    values = loss_table(models, pool.X(audit), pool.y(audit))
    member = np.array([[int(int(r) in ds) for r in audit] for ds in datasets], dtype=np.int8)
    return SignalMatrix(list(target_ids), [int(r) for r in audit], values, member).check()


def build_outworlds(cfg: BenchmarkConfig, pool: PopulationPool, audit, target_ids, models) -> dict:
    """Out-world loss samples for each requested attack; none of them touches the audit set."""
    root = cfg.seed
    excl = [int(r) for r in audit]
    sets: dict = {}
    if "S" in cfg.attacks:
        sets["S"] = build_shadow(pool, cfg.n, cfg.n_shadow, cfg.train, root.child("shadow"),
                                 cfg.shadow_eval_per_class, exclude=excl)
    if "P" in cfg.attacks:
        sets["P"] = [build_population(m, pool, cfg.m_per_class, root.child("population", i), exclude=excl,
                                      model_id=tid)
                     for i, (m, tid) in enumerate(zip(models, target_ids))]
    if "R" in cfg.attacks:
        sets["R"] = build_reference(pool, audit, cfg.n_reference, cfg.n, cfg.train, root.child("reference"))
    if "D" in cfg.attacks:
        sets["D"] = {tid: build_distilled(m, pool, audit, cfg.n_distilled, cfg.n, cfg.train,
                                          root.child("distilled", i), target_id=tid)
                     for i, (m, tid) in enumerate(zip(models, target_ids))}
    return sets


def calibrate_all(sets: dict, method=SmoothingMethod.LINEAR) -> dict:
    calibrators = {"S": calibrate_S, "P": calibrate_P, "R": calibrate_R, "D": calibrate_D}
    return {k: calibrators[k](v, method) for k, v in sets.items()}


def audit_targets(signals: SignalMatrix, labels) -> tuple[list, np.ndarray]:
    """Flatten a target signal matrix into (targets, membership truths), model-major."""
    targets, truths = [], []
    for i, tid in enumerate(signals.model_ids):
        for j, rid in enumerate(signals.record_ids):
            targets.append(Target(tid, int(rid), int(labels[j]), float(signals.values[i, j])))
            truths.append(bool(signals.membership[i, j]))
    return targets, np.array(truths)


def run_audit(cfg: BenchmarkConfig, pool: PopulationPool | None = None) -> AuditRun:
    if pool is None:
        pool = gen_population(cfg.dim, cfg.num_classes, cfg.pool_size, cfg.class_scale, cfg.seed.child("pool"),
                              separation=cfg.separation)
    audit, target_ids, datasets, models = train_targets(cfg, pool)
    signals = target_signals(pool, audit, target_ids, datasets, models)
    targets, truths = audit_targets(signals, pool.y(audit))
    run = AuditRun(cfg, pool, audit, target_ids, datasets, models, targets, truths)
    run.sets = build_outworlds(cfg, pool, audit, target_ids, models)
    run.tfns = calibrate_all(run.sets, cfg.method)
    return run


def mean_aucs(cfg: BenchmarkConfig, seeds) -> dict:
    """Score-sweep AUC per attack, averaged over root seeds."""
    per = [run_audit(cfg.with_seed(SeedSpec(int(s)))).aucs() for s in seeds]
    return {k: float(np.mean([p[k] for p in per])) for k in per[0]}
