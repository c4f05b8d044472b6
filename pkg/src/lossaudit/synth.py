"""Synthetic population pools and a small deterministic learner.

The learner is a one-hidden-layer tanh network with a softmax head, trained
with plain mini-batch SGD on cross-entropy. ``hidden_width=0`` drops the
hidden layer and gives multinomial logistic regression. Many models with
the same data size and hyper-parameters are trained in lockstep on stacked
parameter tensors; each model's result does not depend on which other
models share its batch.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Dataset, Record, SeedSpec, TrainingDiverged, ValidationError

PROB_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# population


@dataclass(frozen=True, eq=False)
class PopulationPool:
    dim: int
    num_classes: int
    features: np.ndarray
    labels: np.ndarray
    class_means: np.ndarray
    class_scale: float
    generator_seed: SeedSpec

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def ref(self) -> str:
        h = hashlib.sha256(self.features.tobytes() + self.labels.tobytes()).hexdigest()
        return f"pool-{h[:12]}"

    def record(self, record_id: int) -> Record:
        return Record(int(record_id), self.features[record_id], int(self.labels[record_id]))

    def X(self, ids) -> np.ndarray:
        return self.features[np.asarray(ids, dtype=np.int64)]

    def y(self, ids) -> np.ndarray:
        return self.labels[np.asarray(ids, dtype=np.int64)]

    def ids_with_label(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)


def class_means(d: int, K: int, separation: float = 1.0) -> np.ndarray:
    """Deterministic class centres, each at distance ``separation`` from the origin.

    With K <= d the centres are the centred simplex vertices e_k - 1/K; otherwise
    they are spread on a line (d == 1) or a circle in the first two coordinates.
    """
    means = np.zeros((K, d))
    if K <= d:
        means[:, :K] = np.eye(K) - 1.0 / K
    elif d == 1:
        means[:, 0] = np.linspace(-1.0, 1.0, K)
    else:
        angles = 2 * np.pi * np.arange(K) / K
        means[:, 0] = np.cos(angles)
        means[:, 1] = np.sin(angles)
    norms = np.linalg.norm(means, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return separation * means / norms


def gen_population(d: int, K: int, pool_size: int, class_scale: float, seed: SeedSpec,
                   separation: float = 1.0) -> PopulationPool:
    if d < 1:
        raise ValueError("dimension d must be at least 1")
    if K < 2:
        raise ValueError("need at least 2 classes")
    if pool_size < K:
        raise ValueError("pool_size must be at least the number of classes")
    if class_scale < 0:
        raise ValueError("class_scale must be non-negative")
    means = class_means(d, K, separation)
    labels = np.arange(pool_size, dtype=np.int64) % K
    noise = seed.child("population").rng().standard_normal((pool_size, d))
    features = means[labels] + class_scale * noise
    for arr in (features, labels, means):
        arr.setflags(write=False)
    return PopulationPool(d, K, features, labels, means, float(class_scale), seed)


def sample_dataset(pool: PopulationPool, n: int, seed: SeedSpec, *,
                   poisson_rate: Optional[float] = None, exclude=()) -> Dataset:
    """Draw a training set: ``n`` distinct ids, or Poisson inclusion at ``poisson_rate``."""
    excluded = np.fromiter((int(i) for i in exclude), dtype=np.int64)
    available = np.setdiff1d(np.arange(pool.size), excluded, assume_unique=False)
    rng = seed.rng()
    if poisson_rate is not None:
        if not 0 < poisson_rate <= 1:
            raise ValueError(f"Poisson rate must lie in (0, 1], got {poisson_rate}")
        ids = available[rng.random(len(available)) < poisson_rate]
    else:
        if n > len(available):
            raise ValueError(f"cannot draw {n} records from {len(available)} available")
        if n < 0:
            raise ValueError("n must be non-negative")
        ids = rng.choice(available, size=n, replace=False)
    return Dataset(tuple(int(i) for i in ids), pool.ref)


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class TrainConfig:
    hidden_width: int = 32
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 0.1
    clip_norm: Optional[float] = None
    weight_init_scale: float = 1.0
    seed: SeedSpec = SeedSpec(0)

    def __post_init__(self):
        if self.hidden_width < 0:
            raise ValueError("hidden_width must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")

    def with_seed(self, seed: SeedSpec) -> "TrainConfig":
        return replace(self, seed=seed)

    def describe(self) -> str:
        return (f"h={self.hidden_width};epochs={self.epochs};bs={self.batch_size};"
                f"lr={self.learning_rate!r};clip={self.clip_norm!r};"
                f"init={self.weight_init_scale!r};seed={self.seed}")


@dataclass(frozen=True, eq=False)
class ToyModel:
    W1: np.ndarray  # (h, d)
    b1: np.ndarray  # (h,)
    W2: np.ndarray  # (K, h) or (K, d) when h == 0
    b2: np.ndarray  # (K,)
    fingerprint: str = ""
    dataset_fingerprint: str = ""
    activation: str = "tanh"

    @property
    def hidden_width(self) -> int:
        return self.W1.shape[0]

    @property
    def dim(self) -> int:
        return self.W1.shape[1] if self.hidden_width else self.W2.shape[1]

    @property
    def num_classes(self) -> int:
        return self.W2.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    def same_parameters(self, other: "ToyModel") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.params(), other.params()))


def _as_2d(x) -> np.ndarray:
    if isinstance(x, Record):
        x = x.features
    x = np.asarray(x, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


def _check_dim(model: ToyModel, X: np.ndarray):
    if X.shape[1] != model.dim:
        raise ValidationError(f"feature dimension {X.shape[1]} does not match model dimension {model.dim}")


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def hidden(model: ToyModel, X) -> np.ndarray:
    X = _as_2d(X)
    return np.tanh(X @ model.W1.T + model.b1)


def logits(model: ToyModel, X) -> np.ndarray:
    X = _as_2d(X)
    _check_dim(model, X)
    H = hidden(model, X) if model.hidden_width else X
    return H @ model.W2.T + model.b2


def predict_proba(model: ToyModel, X) -> np.ndarray:
    """Class probabilities; a single record gives a length-K vector."""
    single = isinstance(X, Record) or np.asarray(X if not isinstance(X, Record) else X.features).ndim == 1
    z = logits(model, X)
    p = np.exp(_log_softmax(z))
    return p[0] if single else p


def losses(model: ToyModel, X, y) -> np.ndarray:
    """Clamped cross-entropy -log(max(p_y, 1e-12)) for each row of X."""
    p = predict_proba(model, _as_2d(X))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    p_label = p[np.arange(len(y)), y]
    return -np.log(np.maximum(p_label, PROB_FLOOR))


def loss(model: ToyModel, record: Record) -> float:
    return float(losses(model, record.features, [record.label])[0])


def penultimate(model: ToyModel, record) -> np.ndarray:
    if model.hidden_width == 0:
        raise ValidationError("no hidden layer: model has hidden_width 0")
    x = record.features if isinstance(record, Record) else record
    return hidden(model, x)[0]


def loss_table(models: Sequence[ToyModel], X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Loss matrix with one row per model and one column per record."""
    return np.vstack([losses(m, X, y) for m in models]) if len(models) else np.zeros((0, len(y)))


# ---------------------------------------------------------------------------
# training


def init_params(d: int, K: int, config: TrainConfig) -> list[np.ndarray]:
    """Gaussian init scaled by 1/sqrt(fan_in); biases start at zero."""
    rng = config.seed.child("init").rng()
    h = config.hidden_width
    s = config.weight_init_scale
    if h:
        W1 = rng.standard_normal((h, d)) * (s / math.sqrt(d))
        W2 = rng.standard_normal((K, h)) * (s / math.sqrt(h))
    else:
        W1 = np.zeros((0, d))
        W2 = rng.standard_normal((K, d)) * (s / math.sqrt(d))
    return [W1, np.zeros(h), W2, np.zeros(K)]


def batch_loss_and_grad(params: Sequence[np.ndarray], X: np.ndarray, Y: np.ndarray):
    """Mean cross-entropy against target distributions ``Y`` and its gradient.

    Parameters are stacked over a leading model axis: ``W1`` is (M, h, d),
    ``X`` is (M, B, d) and ``Y`` is (M, B, K). Returns ``(loss (M,), grads)``.
    """
    W1, b1, W2, b2 = params
    B = X.shape[1]
    if W1.shape[1]:
        H = np.tanh(np.matmul(X, W1.transpose(0, 2, 1)) + b1[:, None, :])
    else:
        H = X
    z = np.matmul(H, W2.transpose(0, 2, 1)) + b2[:, None, :]
    logp = _log_softmax(z)
    loss_val = -(Y * logp).sum(axis=2).sum(axis=1) / B
    dz = (np.exp(logp) - Y) / B
    gW2 = np.matmul(dz.transpose(0, 2, 1), H)
    gb2 = dz.sum(axis=1)
    if W1.shape[1]:
        dpre = np.matmul(dz, W2) * (1.0 - H * H)
        gW1 = np.matmul(dpre.transpose(0, 2, 1), X)
        gb1 = dpre.sum(axis=1)
    else:
        gW1 = np.zeros_like(W1)
        gb1 = np.zeros_like(b1)
    return loss_val, [gW1, gb1, gW2, gb2]


StepCallback = Callable[[int, int, np.ndarray], None]


def _sgd_lockstep(X: np.ndarray, Y: np.ndarray, configs: Sequence[TrainConfig],
                  on_step: Optional[StepCallback] = None) -> list[list[np.ndarray]]:
    M, n, d = X.shape
    K = Y.shape[2]
    cfg = configs[0]
    inits = [init_params(d, K, c) for c in configs]
    params = [np.stack([p[j] for p in inits]) for j in range(4)]
    bs = min(cfg.batch_size, n)
    lr = cfg.learning_rate
    rows = np.arange(M)[:, None]
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported per epoch below
        return _sgd_epochs(params, X, Y, configs, cfg, bs, lr, rows, on_step)


def _sgd_epochs(params, X, Y, configs, cfg, bs, lr, rows, on_step):
    M, n, _ = X.shape
    for epoch in range(cfg.epochs):
        perms = np.stack([c.seed.child("epoch", epoch).rng().permutation(n) for c in configs])
        for step, start in enumerate(range(0, n, bs)):
            idx = perms[:, start:start + bs]
            _, grads = batch_loss_and_grad(params, X[rows, idx], Y[rows, idx])
            sq = sum((g.reshape(M, -1) ** 2).sum(axis=1) for g in grads)
            norms = np.sqrt(sq)
            if cfg.clip_norm is not None:
                scale = np.minimum(1.0, cfg.clip_norm / np.maximum(norms, 1e-300))
                grads = [g * scale.reshape((M,) + (1,) * (g.ndim - 1)) for g in grads]
                norms = norms * scale
            if on_step is not None:
                on_step(epoch, step, norms)
            for p, g in zip(params, grads):
                p -= lr * g
        finite = np.ones(M, dtype=bool)
        for p in params:
            finite &= np.isfinite(p.reshape(M, -1)).all(axis=1)
        if not finite.all():
            raise TrainingDiverged(epoch, f"model {int(np.flatnonzero(~finite)[0])} of batch")
    return [[p[m].copy() for p in params] for m in range(M)]


def _model_fingerprint(data_fp: str, config: TrainConfig, extra: str = "") -> str:
    h = hashlib.sha256(f"{data_fp}|{config.describe()}|{extra}".encode("utf-8"))
    return h.hexdigest()[:16]


def _freeze(arrs):
    for a in arrs:
        a.setflags(write=False)
    return arrs


_WORKERS = 1


def set_workers(n: int) -> int:
    """Bound the number of training processes; returns the previous bound.

    Results do not depend on this value: a model's trajectory is the same
    whichever lockstep batch it lands in.
    """
    global _WORKERS
    if n < 1:
        raise ValueError("workers must be at least 1")
    prev, _WORKERS = _WORKERS, int(n)
    return prev


def _fit_groups(X_list, Y_list, configs, fps, extras, on_step):
    """Train each (X, Y, config) job; jobs sharing shapes and hyper-parameters run in lockstep."""
    groups: dict = {}
    for i, (X, c) in enumerate(zip(X_list, configs)):
        key = (X.shape, replace(c, seed=SeedSpec(0)))
        groups.setdefault(key, []).append(i)
    jobs = []
    for idxs in groups.values():
        parts = [idxs] if _WORKERS == 1 or on_step is not None else \
            [p.tolist() for p in np.array_split(np.array(idxs), min(_WORKERS, len(idxs)))]
        for part in parts:
            jobs.append((part, np.stack([X_list[i] for i in part]), np.stack([Y_list[i] for i in part]),
                         [configs[i] for i in part]))
    if len(jobs) > 1 and _WORKERS > 1 and on_step is None:
        with ProcessPoolExecutor(max_workers=_WORKERS) as ex:
            results = list(ex.map(_sgd_lockstep, *zip(*[j[1:] for j in jobs])))
    else:
        results = [_sgd_lockstep(Xs, Ys, cs, on_step) for _, Xs, Ys, cs in jobs]
    out: list = [None] * len(configs)
    for (idxs, *_), fitted in zip(jobs, results):
        for i, ps in zip(idxs, fitted):
            out[i] = ToyModel(*_freeze(ps), fingerprint=_model_fingerprint(fps[i], configs[i], extras[i]),
                              dataset_fingerprint=fps[i])
    return out


def _one_hot(y: np.ndarray, K: int) -> np.ndarray:
    Y = np.zeros((len(y), K))
    Y[np.arange(len(y)), y] = 1.0
    return Y


def _check_dataset(pool: PopulationPool, dataset: Dataset):
    if len(dataset) == 0:
        raise ValueError("empty training dataset")
    ids = np.asarray(dataset.record_ids)
    if ids.min() < 0 or ids.max() >= pool.size:
        raise ValidationError("dataset references ids outside the pool")


def train_many(pool: PopulationPool, datasets: Sequence[Dataset], configs: Sequence[TrainConfig],
               on_step: Optional[StepCallback] = None) -> list[ToyModel]:
    if len(datasets) != len(configs):
        raise ValueError("need one config per dataset")
    for ds in datasets:
        _check_dataset(pool, ds)
    X_list = [pool.X(ds.record_ids) for ds in datasets]
    Y_list = [_one_hot(pool.y(ds.record_ids), pool.num_classes) for ds in datasets]
    fps = [ds.fingerprint for ds in datasets]
    return _fit_groups(X_list, Y_list, configs, fps, ["sgd"] * len(configs), on_step)


def train(pool: PopulationPool, dataset: Dataset, config: TrainConfig,
          on_step: Optional[StepCallback] = None) -> ToyModel:
    """Mini-batch SGD on mean cross-entropy; deterministic in (dataset, config).

    ``on_step(epoch, step, norms)`` receives the (post-clipping) global
    gradient norm of every update.
    """
    return train_many(pool, [dataset], [config], on_step)[0]


def soft_label(model: ToyModel, pool: PopulationPool, ids) -> list[tuple[int, np.ndarray]]:
    ids = [int(i) for i in ids]
    if not ids:
        return []
    if pool.dim != model.dim:
        raise ValidationError("model and pool dimensions differ")
    P = predict_proba(model, pool.X(ids))
    return list(zip(ids, P))


def distill_many(target: ToyModel, pool: PopulationPool, n: int, config: TrainConfig,
                 seeds: Sequence[SeedSpec], exclude=()) -> tuple[list[ToyModel], list[Dataset]]:
    """Distil one student per seed, each on its own fresh soft-labelled draw."""
    if n <= 0:
        raise ValueError("empty distillation set")
    datasets = [sample_dataset(pool, n, s.child("data"), exclude=exclude) for s in seeds]
    X_list = [pool.X(ds.record_ids) for ds in datasets]
    Y_list = [predict_proba(target, X) for X in X_list]
    configs = [config.with_seed(s.child("train")) for s in seeds]
    fps = [ds.fingerprint for ds in datasets]
    extra = f"distill:{target.fingerprint}"
    models = _fit_groups(X_list, Y_list, configs, fps, [extra] * len(seeds), None)
    return models, datasets


def distill(target: ToyModel, pool: PopulationPool, n: int, config: TrainConfig, seed: SeedSpec,
            exclude=()) -> ToyModel:
    """Train a student on ``n`` population records soft-labelled by ``target``.

    The student minimises the full-vector cross-entropy H(teacher, student).
    Data is drawn with ``seed/data``; init and shuffling use ``seed/train``.
    """
    models, _ = distill_many(target, pool, n, config, [seed], exclude)
    return models[0]


# ---------------------------------------------------------------------------
# posterior sampling


@dataclass(frozen=True)
class PosteriorConfig:
    """Random-walk Metropolis over a bounded box (uniform prior on the box)."""

    temperature: float
    step_size: float = 0.3
    burn_in: int = 2000
    thin: int = 1
    seed: SeedSpec = SeedSpec(0)
    bound: float = 6.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.burn_in < 0 or self.thin < 1:
            raise ValueError("burn_in must be >= 0 and thin >= 1")
        if not self.step_size > 0 or not self.bound > 0:
            raise ValueError("step_size and bound must be positive")

    def with_seed(self, seed: SeedSpec) -> "PosteriorConfig":
        return replace(self, seed=seed)


def reduced_params_to_model(theta: np.ndarray, d: int, K: int, data_fp: str = "", fp: str = "") -> ToyModel:
    """Logistic model with class-0 weights pinned at zero; ``theta`` holds rows 1..K-1 as [w | b]."""
    theta = np.asarray(theta, dtype=np.float64).reshape(K - 1, d + 1)
    W = np.vstack([np.zeros((1, d)), theta[:, :d]])
    b = np.concatenate([[0.0], theta[:, d]])
    return ToyModel(*_freeze([np.zeros((0, d)), np.zeros(0), W, b]), fingerprint=fp, dataset_fingerprint=data_fp)


def gibbs_energy(theta: np.ndarray, X: np.ndarray, y: np.ndarray, K: int, temperature: float) -> np.ndarray:
    """(1/T) * summed cross-entropy for stacked reduced parameters ``theta`` (C, P) and data (C, n, d)."""
    C = theta.shape[0]
    d = X.shape[2]
    th = theta.reshape(C, K - 1, d + 1)
    W = np.concatenate([np.zeros((C, 1, d)), th[:, :, :d]], axis=1)
    b = np.concatenate([np.zeros((C, 1)), th[:, :, d]], axis=1)
    z = np.matmul(X, W.transpose(0, 2, 1)) + b[:, None, :]
    logp = _log_softmax(z)
    ce = -np.take_along_axis(logp, y[:, :, None], axis=2)[:, :, 0]
    return ce.sum(axis=1) / temperature


def posterior_sample_many(pool: PopulationPool, datasets: Sequence[Dataset],
                          pconfigs: Sequence[PosteriorConfig]) -> list[ToyModel]:
    """One Metropolis chain per (dataset, config); chains of equal data size run vectorised."""
    if pool.dim > 4:
        raise ValueError("posterior sampling is limited to d <= 4")
    K, d = pool.num_classes, pool.dim
    P = (K - 1) * (d + 1)
    out: list = [None] * len(datasets)
    groups: dict = {}
    for i, (ds, pc) in enumerate(zip(datasets, pconfigs)):
        groups.setdefault((len(ds), replace(pc, seed=SeedSpec(0))), []).append(i)
    for (n, pc0), idxs in groups.items():
        steps = pc0.burn_in + pc0.thin
        X = np.stack([pool.X(datasets[i].record_ids) for i in idxs])
        y = np.stack([pool.y(datasets[i].record_ids) for i in idxs])
        noise = np.empty((len(idxs), steps, P))
        unif = np.empty((len(idxs), steps))
        theta = np.empty((len(idxs), P))
        for j, i in enumerate(idxs):
            rng = pconfigs[i].seed.rng()
            theta[j] = rng.uniform(-pc0.bound, pc0.bound, size=P)
            noise[j] = rng.standard_normal((steps, P))
            unif[j] = rng.random(steps)
        energy = gibbs_energy(theta, X, y, K, pc0.temperature)
        if not np.isfinite(energy).all():
            raise FloatingPointError("non-finite energy at chain start")
        for t in range(steps):
            prop = theta + pc0.step_size * noise[:, t]
            inside = (np.abs(prop) <= pc0.bound).all(axis=1)
            e_prop = gibbs_energy(prop, X, y, K, pc0.temperature)
            if not np.isfinite(e_prop[inside]).all():
                raise FloatingPointError(f"non-finite energy at step {t}")
            accept = inside & (np.log(unif[:, t]) < energy - e_prop)
            theta[accept] = prop[accept]
            energy[accept] = e_prop[accept]
        for j, i in enumerate(idxs):
            fp = hashlib.sha256(f"{datasets[i].fingerprint}|{pconfigs[i]}".encode()).hexdigest()[:16]
            out[i] = reduced_params_to_model(theta[j], d, K, datasets[i].fingerprint, fp)
    return out


def posterior_sample(pool: PopulationPool, dataset: Dataset, pconfig: PosteriorConfig) -> ToyModel:
    """Approximate draw from P(theta | D) ~ exp(-(1/T) sum_z loss(theta, z)) on the box.

    Restricted to logistic models (no hidden layer) with class-0 parameters
    pinned at zero so the posterior is identifiable.
    """
    return posterior_sample_many(pool, [dataset], [pconfig])[0]
