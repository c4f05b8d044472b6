"""Challengers for the four membership inference games.

Every random choice comes from a named seed path, so a game replays exactly:

* ``root/trial:i/dataset``, ``root/trial:i/model:b``: per-trial dataset and training seeds
* ``root/trial:i/z0``, ``root/trial:i/z1``: the non-member and member draws
* ``root/trial:i/coin``: the secret bit

Variants that fix a seed replace the per-trial path by the fixed seed.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .attacks import AttackDecision
from .core import Dataset, Record, SeedSpec
from .synth import (PopulationPool, PosteriorConfig, ToyModel, TrainConfig, loss, posterior_sample_many,
                    sample_dataset, train_many)


class GameVariant(str, enum.Enum):
    AVERAGE_ALL = "AverageAll"
    FIXED_MODEL = "FixedModel"
    FIXED_RECORD = "FixedRecord"
    FIXED_WORST_CASE = "FixedWorstCase"


@dataclass(frozen=True)
class GameSpec:
    variant: GameVariant
    n: int
    trials: int
    root_seed: SeedSpec
    fixed_dataset_seed: Optional[SeedSpec] = None
    fixed_model_seed: Optional[SeedSpec] = None
    fixed_record_seed: Optional[SeedSpec] = None
    fixed_record_id: Optional[int] = None
    alpha: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "variant", GameVariant(self.variant))
        v = self.variant
        if self.trials < 1:
            raise ValueError("trials must be positive")
        if self.n < 1:
            raise ValueError("n must be positive")
        has_record = self.fixed_record_seed is not None or self.fixed_record_id is not None
        if v is GameVariant.FIXED_MODEL and (self.fixed_dataset_seed is None or self.fixed_model_seed is None):
            raise ValueError("FixedModel needs fixed_dataset_seed and fixed_model_seed")
        if v is GameVariant.FIXED_RECORD and not has_record:
            raise ValueError("FixedRecord needs fixed_record_seed or fixed_record_id")
        if v is GameVariant.FIXED_WORST_CASE and (self.fixed_dataset_seed is None or not has_record):
            raise ValueError("FixedWorstCase needs fixed_dataset_seed and a fixed record")

    def trial_seed(self, i: int) -> SeedSpec:
        return self.root_seed.child("trial", i)


def coin(spec: GameSpec, trial_index: int) -> int:
    """The secret bit of a trial (unbiased, seeded per trial)."""
    return int(spec.trial_seed(trial_index).child("coin").rng().integers(0, 2))


class Trainer:
    """Training algorithm T: maps (pool, dataset, seed) to a model."""

    def many(self, pool: PopulationPool, datasets: Sequence[Dataset], seeds: Sequence[SeedSpec]) -> list[ToyModel]:
        raise NotImplementedError

    def __call__(self, pool, dataset, seed) -> ToyModel:
        return self.many(pool, [dataset], [seed])[0]


@dataclass(frozen=True)
class SGDTrainer(Trainer):
    config: TrainConfig

    def many(self, pool, datasets, seeds):
        return train_many(pool, datasets, [self.config.with_seed(s) for s in seeds])


@dataclass(frozen=True)
class PosteriorTrainer(Trainer):
    config: PosteriorConfig

    def many(self, pool, datasets, seeds):
        return posterior_sample_many(pool, datasets, [self.config.with_seed(s) for s in seeds])


@dataclass(frozen=True, eq=False)
class Challenge:
    trial_index: int
    model: ToyModel
    record: Record
    secret_bit: int
    dataset: Dataset  # training set of the presented model
    worlds: Optional[tuple[Dataset, Dataset]] = None  # (D0, D1) for the fixed-record variants


@dataclass(frozen=True)
class AdversaryContext:
    trial_index: int
    alpha: float
    pool: PopulationPool


Adversary = Callable[[ToyModel, Record, AdversaryContext], Union[int, AttackDecision]]


@dataclass(frozen=True, eq=False)
class TranscriptEntry:
    challenge: Challenge
    answer: int
    loss: float
    threshold: float = float("nan")
    score: float = float("nan")

    @property
    def correct(self) -> bool:
        return self.answer == self.challenge.secret_bit


@dataclass(eq=False)
class Transcript:
    spec: GameSpec
    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    @property
    def summary(self) -> dict:
        return score(self)

    def bits(self) -> np.ndarray:
        return np.array([e.challenge.secret_bit for e in self.entries], dtype=np.int8)

    def answers(self) -> np.ndarray:
        return np.array([e.answer for e in self.entries], dtype=np.int8)

    def write_csv(self, path, config_hash: str = ""):
        with open(path, "w", newline="") as fh:
            if config_hash:
                fh.write(f"#config={config_hash}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trial_index", "b", "b_hat", "loss", "threshold"])
            for e in self.entries:
                w.writerow([e.challenge.trial_index, e.challenge.secret_bit, e.answer, repr(e.loss),
                            repr(e.threshold)])


class TrialError(RuntimeError):
    def __init__(self, trial_index: int, cause: Exception):
        super().__init__(f"trial {trial_index} failed: {cause}")
        self.trial_index = trial_index


# ---------------------------------------------------------------------------


def _draw_outside(pool: PopulationPool, seed: SeedSpec, taken: frozenset) -> int:
    rng = seed.rng()
    if len(taken) >= pool.size:
        raise ValueError("no population record outside the dataset")
    while True:
        z = int(rng.integers(0, pool.size))
        if z not in taken:
            return z


def _fixed_record(spec: GameSpec, pool: PopulationPool, taken: frozenset = frozenset()) -> int:
    if spec.fixed_record_id is not None:
        return int(spec.fixed_record_id)
    return _draw_outside(pool, spec.fixed_record_seed, taken)


def _plan(spec: GameSpec, pool: PopulationPool):
    """Per trial: (dataset to train on, training seed, record id, bit, worlds)."""
    v = spec.variant
    plans = []
    fixed_ds = None
    fixed_z = None
    if v in (GameVariant.FIXED_MODEL, GameVariant.FIXED_WORST_CASE):
        fixed_ds = sample_dataset(pool, spec.n, spec.fixed_dataset_seed)
    if v is GameVariant.FIXED_RECORD:
        fixed_z = _fixed_record(spec, pool)
    if v is GameVariant.FIXED_WORST_CASE:
        fixed_z = _fixed_record(spec, pool, fixed_ds.id_set)
        fixed_ds = fixed_ds.without(fixed_z)
    for i in range(spec.trials):
        ts = spec.trial_seed(i)
        b = coin(spec, i)
        if v in (GameVariant.AVERAGE_ALL, GameVariant.FIXED_MODEL):
            if v is GameVariant.AVERAGE_ALL:
                ds = sample_dataset(pool, spec.n, ts.child("dataset"))
                mseed = ts.child("model")
            else:
                ds, mseed = fixed_ds, spec.fixed_model_seed
            z0 = _draw_outside(pool, ts.child("z0"), ds.id_set)
            z1 = ds.record_ids[int(ts.child("z1").rng().integers(0, len(ds)))]
            plans.append((ds, mseed, z1 if b else z0, b, None))
        else:
            if v is GameVariant.FIXED_RECORD:
                d0 = sample_dataset(pool, spec.n, ts.child("dataset"), exclude=(fixed_z,))
            else:
                d0 = fixed_ds
            d1 = d0.with_record(fixed_z)
            plans.append((d1 if b else d0, ts.child("model", b), fixed_z, b, (d0, d1)))
    return plans


def build_challenges(spec: GameSpec, pool: PopulationPool, trainer: Trainer, chunk: int = 256) -> list[Challenge]:
    plans = _plan(spec, pool)
    models: list = [None] * len(plans)
    if spec.variant is GameVariant.FIXED_MODEL:
        shared = trainer(pool, plans[0][0], plans[0][1])
        models = [shared] * len(plans)
    else:
        for start in range(0, len(plans), chunk):
            part = plans[start:start + chunk]
            try:
                trained = trainer.many(pool, [p[0] for p in part], [p[1] for p in part])
            except Exception as exc:
                # retrain one by one to name the failing trial
                for j, p in enumerate(part):
                    try:
                        trainer(pool, p[0], p[1])
                    except Exception as inner:
                        raise TrialError(start + j, inner) from inner
                raise TrialError(start, exc) from exc
            models[start:start + len(part)] = trained
    return [Challenge(i, m, pool.record(p[2]), p[3], p[0], p[4]) for i, (p, m) in enumerate(zip(plans, models))]


def play(spec: GameSpec, adversary: Adversary, pool: PopulationPool, trainer: Trainer) -> Transcript:
    """Run all trials of ``spec`` against ``adversary``; entries are in trial order."""
    transcript = Transcript(spec)
    for ch in build_challenges(spec, pool, trainer):
        ctx = AdversaryContext(ch.trial_index, spec.alpha, pool)
        answer = adversary(ch.model, ch.record, ctx)
        if isinstance(answer, AttackDecision):
            entry = TranscriptEntry(ch, int(answer.predicted_bit), answer.loss, answer.threshold,
                                    answer.confidence)
        else:
            entry = TranscriptEntry(ch, int(answer), loss(ch.model, ch.record))
        transcript.entries.append(entry)
    return transcript


def score(transcript: Transcript) -> dict:
    """Accuracy plus TPR over b=1 trials and FPR over b=0 trials (None when undefined)."""
    if len(transcript) == 0:
        raise ValueError("empty transcript")
    b = transcript.bits()
    a = transcript.answers()
    tp = int(((b == 1) & (a == 1)).sum())
    fn = int(((b == 1) & (a == 0)).sum())
    fp = int(((b == 0) & (a == 1)).sum())
    tn = int(((b == 0) & (a == 0)).sum())
    n1, n0 = tp + fn, fp + tn
    return {
        "accuracy": (tp + tn) / len(b),
        "tpr": tp / n1 if n1 else None,
        "fpr": fp / n0 if n0 else None,
        "counts": {"tp": tp, "fn": fn, "fp": fp, "tn": tn, "members": n1, "nonmembers": n0},
    }
