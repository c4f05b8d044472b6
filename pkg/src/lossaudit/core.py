"""Shared types, seed derivation and validation helpers.

Seed derivation
---------------
``derive_seed(root, path)`` is a pure 64-bit function, independent of any
platform RNG::

    state = splitmix64(root)
    for tag, index in path:
        state = splitmix64(state ^ fnv1a64(tag.encode("utf-8")))
        state = splitmix64(state ^ index)
    return state

``splitmix64(x)`` is the SplitMix64 step: add the golden-gamma constant
``0x9E3779B97F4A7C15`` (mod 2**64), then the finalizer
``z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27; z *= 0x94D049BB133111EB;
z ^= z >> 31``, all arithmetic mod 2**64. ``fnv1a64`` is 64-bit FNV-1a with
offset basis ``0xCBF29CE484222325`` and prime ``0x100000001B3``.
Derived seeds feed ``numpy.random.PCG64``, whose streams are themselves
platform independent.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


class ValidationError(ValueError):
    """An input violates a structural invariant."""


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, detail: str = ""):
        msg = f"training diverged at epoch {epoch}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.epoch = epoch


def splitmix64(x: int) -> int:
    z = (x + _GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & MASK64
    return h


def derive_seed(root: int, path: Sequence[tuple[str, int]] = ()) -> int:
    state = splitmix64(root & MASK64)
    for tag, index in path:
        if index < 0:
            raise ValueError(f"seed path index must be non-negative, got {index}")
        state = splitmix64(state ^ fnv1a64(tag.encode("utf-8")))
        state = splitmix64(state ^ (index & MASK64))
    return state


@dataclass(frozen=True)
class SeedSpec:
    """A root seed plus a derivation path of ``(tag, index)`` pairs."""

    root: int
    path: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        if not 0 <= self.root <= MASK64:
            raise ValueError("root seed must fit in 64 unsigned bits")

    def child(self, tag: str, index: int = 0) -> "SeedSpec":
        return SeedSpec(self.root, self.path + ((tag, int(index)),))

    @property
    def value(self) -> int:
        return derive_seed(self.root, self.path)

    def rng(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.value))

    def __str__(self):
        return "/".join([str(self.root)] + [f"{t}:{i}" for t, i in self.path])


@dataclass(frozen=True)
class Record:
    id: int
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class Dataset:
    record_ids: tuple[int, ...]
    pool_ref: str

    def __post_init__(self):
        ids = tuple(int(i) for i in self.record_ids)
        if len(set(ids)) != len(ids):
            raise ValidationError("dataset contains duplicate record ids")
        object.__setattr__(self, "record_ids", ids)

    def __len__(self):
        return len(self.record_ids)

    def __contains__(self, record_id):
        return record_id in self.id_set

    @property
    def id_set(self) -> frozenset[int]:
        return frozenset(self.record_ids)

    @property
    def fingerprint(self) -> str:
        return dataset_fingerprint(self.record_ids)

    def without(self, record_id: int) -> "Dataset":
        return Dataset(tuple(i for i in self.record_ids if i != record_id), self.pool_ref)

    def with_record(self, record_id: int) -> "Dataset":
        if record_id in self.id_set:
            return self
        return Dataset(self.record_ids + (int(record_id),), self.pool_ref)


def dataset_fingerprint(record_ids: Iterable[int]) -> str:
    """Order-independent hash of a set of record ids."""
    ids = sorted(int(i) for i in record_ids)
    h = hashlib.sha256(",".join(map(str, ids)).encode("ascii"))
    return h.hexdigest()[:16]


@dataclass
class SignalMatrix:
    """Per-(model, record) loss table; rows are models, columns records."""

    model_ids: list[str]
    record_ids: list[int]
    values: np.ndarray
    membership: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.model_ids = [str(m) for m in self.model_ids]
        self.record_ids = [int(r) for r in self.record_ids]
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.membership is not None:
            self.membership = np.asarray(self.membership, dtype=np.int8)

    @property
    def shape(self):
        return self.values.shape

    def column(self, record_id: int) -> np.ndarray:
        return self.values[:, self.record_ids.index(record_id)]

    def row(self, model_id: str) -> np.ndarray:
        return self.values[self.model_ids.index(model_id)]

    def check(self) -> "SignalMatrix":
        problem = validate_matrix(self)
        if problem is not None:
            raise ValidationError(problem)
        return self


def validate_matrix(m: SignalMatrix) -> Optional[str]:
    """Return the first violated invariant, or None when the matrix is valid."""
    values = np.asarray(m.values)
    if values.ndim != 2 or values.shape != (len(m.model_ids), len(m.record_ids)):
        return (f"values shape {values.shape} does not match "
                f"({len(m.model_ids)}, {len(m.record_ids)})")
    if len(set(m.model_ids)) != len(m.model_ids):
        return "duplicate model id"
    if len(set(m.record_ids)) != len(m.record_ids):
        return "duplicate record id"
    if any(r < 0 for r in m.record_ids):
        return "negative record id"
    bad = ~np.isfinite(values)
    if bad.any():
        i, j = map(int, np.argwhere(bad)[0])
        return f"non-finite value at ({i},{j})"
    neg = values < 0
    if neg.any():
        i, j = map(int, np.argwhere(neg)[0])
        return f"negative value at ({i},{j})"
    if m.membership is not None:
        mem = np.asarray(m.membership)
        if mem.shape != values.shape:
            return f"membership shape {mem.shape} does not match values {values.shape}"
        if not np.isin(mem, (0, 1)).all():
            return "membership entries must be 0 or 1"
    return None


def check_probability(alpha: float, *, open_interval: bool = False) -> float:
    alpha = float(alpha)
    if math.isnan(alpha) or alpha < 0 or alpha > 1:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if open_interval and alpha in (0.0, 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha
