"""Loss-threshold membership decisions."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import Record
from .synth import ToyModel, loss
from .thresholds import DEPENDENCY, AttackKind, Target, ThresholdFn


@dataclass(frozen=True)
class AttackDecision:
    predicted_bit: int
    loss: float
    threshold: float
    alpha: float

    @property
    def confidence(self) -> float:
        return self.threshold - self.loss


def dependency_of(kind) -> frozenset:
    return DEPENDENCY[AttackKind(kind)]


def target_of(model: ToyModel, record: Record, model_id: str | None = None) -> Target:
    return Target(model_id or model.fingerprint, record.id, record.label, loss(model, record))


def decide_target(tfn: ThresholdFn, target: Target, alpha: float) -> AttackDecision:
    """Member iff loss <= threshold (ties count as member)."""
    c = tfn(target, alpha)
    return AttackDecision(int(target.loss <= c), float(target.loss), float(c), float(alpha))


def decide(tfn: ThresholdFn, model: ToyModel, record: Record, alpha: float,
           model_id: str | None = None) -> AttackDecision:
    return decide_target(tfn, target_of(model, record, model_id), alpha)


class BatchDecisionError(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"decision failed at index {index}: {cause}")
        self.index = index


def decide_batch(tfn: ThresholdFn, targets: Sequence[Target], alpha: float) -> list[AttackDecision]:
    out = []
    for i, t in enumerate(targets):
        try:
            out.append(decide_target(tfn, t, alpha))
        except Exception as exc:
            raise BatchDecisionError(i, exc) from exc
    return out


def membership_scores(tfn: ThresholdFn, targets: Sequence[Target]) -> np.ndarray:
    """Score = -(smallest alpha at which the target is called member); higher means more member-like."""
    return np.array([-tfn.cdf(t) for t in targets])


def write_decisions(path, kind: str, targets: Sequence[Target], decisions: Sequence[AttackDecision],
                    truths: Iterable[int] | None = None, config_hash: str = ""):
    truths = list(truths) if truths is not None else [""] * len(targets)
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"#config={config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model_id", "record_id", "attack", "alpha", "loss", "threshold", "confidence",
                    "predicted", "member"])
        for t, d, m in zip(targets, decisions, truths):
            w.writerow([t.model_id, t.record_id, kind, repr(d.alpha), repr(d.loss), repr(d.threshold),
                        repr(d.confidence), d.predicted_bit, m])
