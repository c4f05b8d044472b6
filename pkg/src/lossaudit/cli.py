"""Command-line pipeline: synth -> train -> signals -> attack -> eval, plus game and lemma1.

Every stage reads its inputs from the output directory written by the stage
before it, and every file it writes starts with a ``#config=<hash>`` line.
Outputs depend only on the config, so two runs produce identical bytes.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import csvio
from .attacks import decide_batch, write_decisions
from .core import Dataset, SeedSpec, TrainingDiverged, ValidationError
from .evaluation.analysis import agreement_table
from .evaluation.benchmark import (BenchmarkConfig, audit_targets, build_outworlds, calibrate_all, target_signals,
                                   train_targets)
from .evaluation.lemma1 import lemma1_experiment
from .evaluation.roc import roc_score_sweep, tpr_at_fpr
from .games import GameSpec, GameVariant, SGDTrainer, play
from .signals import build_population, ingest
from .synth import (PopulationPool, PosteriorConfig, ToyModel, TrainConfig, class_means, gen_population, loss,
                    set_workers)
from .thresholds import SmoothingMethod, Target, calibrate_P, calibrate_S

ATTACK_KINDS = ("S", "P", "R", "D")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config


@dataclass(frozen=True)
class PopulationSection:
    dim: int
    num_classes: int
    pool_size: int
    class_scale: float = 1.0
    separation: float = 1.0


@dataclass(frozen=True)
class AttackSection:
    kinds: tuple = ATTACK_KINDS
    alphas: tuple = (0.01, 0.05, 0.1, 0.3)
    method: str = "linear"
    n: int = 64
    n_targets: int = 2
    n_shadow: int = 20
    n_reference: int = 20
    n_distilled: int = 20
    m_per_class: int = 50
    shadow_eval_per_class: int = 25
    shared_dataset: bool = False


@dataclass(frozen=True)
class GameSection:
    variant: str = "AverageAll"
    trials: int = 200
    n: Optional[int] = None
    adversary: str = "S"
    fixed_record_id: Optional[int] = None


@dataclass(frozen=True)
class Lemma1Section:
    n: int = 8
    temperature: float = 0.1
    trials: int = 2000
    pool_size: int = 400
    class_scale: float = 1.0
    separation: float = 1.0
    bound: float = 10.0
    cells: int = 400
    n_datasets: int = 128


@dataclass(frozen=True)
class ExperimentConfig:
    root: int
    population: Optional[PopulationSection] = None
    training: Optional[TrainConfig] = None
    attack: Optional[AttackSection] = None
    game: Optional[GameSection] = None
    lemma1: Optional[Lemma1Section] = None
    out_dir: str = "out"
    sections: tuple = field(default=(), compare=False)

    def require(self, *names: str):
        for name in names:
            if getattr(self, name) is None:
                raise ConfigError(f"config is missing section [{name}]")
        return self

    @property
    def hash(self) -> str:
        """Digest of every setting that can change an output (the output directory excluded)."""
        payload = {"root": self.root}
        for name in ("population", "attack", "game", "lemma1"):
            sec = getattr(self, name)
            payload[name] = None if sec is None else asdict(sec)
        if self.training is not None:
            payload["training"] = self.training.describe()
        blob = json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def seed(self) -> SeedSpec:
        return SeedSpec(self.root)

    def benchmark(self) -> BenchmarkConfig:
        self.require("population", "training", "attack")
        p, a = self.population, self.attack
        return BenchmarkConfig(dim=p.dim, num_classes=p.num_classes, pool_size=p.pool_size,
                               class_scale=p.class_scale, separation=p.separation, n=a.n, train=self.training,
                               n_targets=a.n_targets, n_shadow=a.n_shadow, n_reference=a.n_reference,
                               n_distilled=a.n_distilled, m_per_class=a.m_per_class,
                               shadow_eval_per_class=a.shadow_eval_per_class, shared_dataset=a.shared_dataset,
                               attacks=a.kinds, method=SmoothingMethod(a.method), seed=self.seed.child("audit"))


def _convert(section: str, key: str, raw: str, typ):
    raw = raw.strip()
    where = f"{section}.{key}"
    try:
        if typ is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, float, str):
            return typ(raw)
        if typ == "optional_int":
            return None if raw == "" else int(raw)
        if typ == "optional_float":
            return None if raw == "" else float(raw)
        if typ == "kinds":
            kinds = tuple(k.strip().upper() for k in raw.split(",") if k.strip())
            bad = [k for k in kinds if k not in ATTACK_KINDS]
            if bad or not kinds:
                raise ValueError(f"unknown attack kinds {bad}")
            return kinds
        if typ == "alphas":
            alphas = tuple(float(a) for a in raw.split(",") if a.strip())
            if not alphas or any(not 0 < a < 1 for a in alphas):
                raise ValueError("alphas must lie in (0, 1)")
            return alphas
    except ValueError as exc:
        raise ConfigError(f"{where}: invalid value {raw!r} ({exc})") from None
    raise AssertionError(typ)


_SCHEMA = {
    "population": (PopulationSection, {"dim": int, "num_classes": int, "pool_size": int, "class_scale": float,
                                       "separation": float}),
    "training": (TrainConfig, {"hidden_width": int, "epochs": int, "batch_size": int, "learning_rate": float,
                               "clip_norm": "optional_float", "weight_init_scale": float}),
    "attack": (AttackSection, {"kinds": "kinds", "alphas": "alphas", "method": str, "n": int, "n_targets": int,
                               "n_shadow": int, "n_reference": int, "n_distilled": int, "m_per_class": int,
                               "shadow_eval_per_class": int, "shared_dataset": bool}),
    "game": (GameSection, {"variant": str, "trials": int, "n": "optional_int", "adversary": str,
                           "fixed_record_id": "optional_int"}),
    "lemma1": (Lemma1Section, {"n": int, "temperature": float, "trials": int, "pool_size": int,
                               "class_scale": float, "separation": float, "bound": float, "cells": int,
                               "n_datasets": int}),
}


def load_config(path, *, alphas: Optional[str] = None, method: Optional[str] = None,
                out: Optional[str] = None) -> ExperimentConfig:
    """Parse an INI-style config; command-line overrides are applied before hashing."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not parser.has_section("seeds") or not parser.has_option("seeds", "root"):
        raise ConfigError("config is missing seeds.root")
    root = _convert("seeds", "root", parser.get("seeds", "root"), int)
    if not 0 <= root < 2 ** 64:
        raise ConfigError("seeds.root must be a 64-bit unsigned integer")
    sections = {}
    for name, (cls, fields) in _SCHEMA.items():
        if not parser.has_section(name):
            continue
        kwargs = {}
        for key, raw in parser.items(name):
            if key not in fields:
                raise ConfigError(f"{name}.{key}: unknown setting")
            kwargs[key] = _convert(name, key, raw, fields[key])
        try:
            sections[name] = cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"[{name}]: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"[{name}]: {exc}") from None
    if "attack" in sections:
        if alphas is not None:
            sections["attack"] = replace(sections["attack"], alphas=_convert("--alpha", "", alphas, "alphas"))
        if method is not None:
            sections["attack"] = replace(sections["attack"], method=method)
        try:
            SmoothingMethod(sections["attack"].method)
        except ValueError:
            raise ConfigError(f"attack.method: unknown smoothing method {sections['attack'].method!r}") from None
    if "game" in sections:
        try:
            GameVariant(sections["game"].variant)
        except ValueError:
            raise ConfigError(f"game.variant: unknown variant {sections['game'].variant!r}") from None
        if sections["game"].adversary not in ("S", "P"):
            raise ConfigError("game.adversary: must be S or P")
    out_dir = out or (parser.get("output", "dir") if parser.has_option("output", "dir") else "out")
    return ExperimentConfig(root, sections.get("population"), sections.get("training"), sections.get("attack"),
                            sections.get("game"), sections.get("lemma1"), out_dir, tuple(parser.sections()))


# ---------------------------------------------------------------------------
# artifact files


def _need(path: Path, producer: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing input {path}; run '{producer}' first")
    return path


def write_pool(path: Path, pool: PopulationPool, config_hash: str):
    header = ["record_id", "label"] + [f"x{k}" for k in range(pool.dim)]
    rows = ([i, int(pool.labels[i])] + [float(v) for v in pool.features[i]] for i in range(pool.size))
    with open(path, "w", newline="") as fh:
        fh.write(f"#config={config_hash}\n")
        fh.write(f"#pool=dim={pool.dim};classes={pool.num_classes};scale={pool.class_scale!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([csvio.fmt(v) if isinstance(v, float) else v for v in row])


def read_pool(path: Path, cfg: ExperimentConfig) -> PopulationPool:
    p = cfg.population
    header, rows = csvio.read_rows(_need(path, "synth"))
    if len(header) != 2 + p.dim:
        raise ValidationError(f"{path}: expected {2 + p.dim} columns, found {len(header)}")
    labels = np.array([int(r[1]) for r in rows], dtype=np.int64)
    features = np.array([[float(v) for v in r[2:]] for r in rows], dtype=np.float64).reshape(len(rows), p.dim)
    means = class_means(p.dim, p.num_classes, p.separation)
    for arr in (features, labels, means):
        arr.setflags(write=False)
    return PopulationPool(p.dim, p.num_classes, features, labels, means, p.class_scale, cfg.seed.child("pool"))


def write_model(path: Path, model_id: str, model: ToyModel, config_hash: str):
    with open(path, "w", newline="") as fh:
        fh.write(f"#config={config_hash}\n")
        fh.write(f"#model={model_id};fingerprint={model.fingerprint};dataset={model.dataset_fingerprint}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tensor", "shape", "values"])
        for name, arr in zip(("W1", "b1", "W2", "b2"), model.params()):
            w.writerow([name, "x".join(str(s) for s in arr.shape), " ".join(csvio.fmt(v) for v in arr.ravel())])


def read_model(path: Path) -> ToyModel:
    with open(_need(path, "train")) as fh:
        lines = fh.read().split("\n")
    meta = dict(kv.split("=", 1) for line in lines if line.startswith("#model=")
                for kv in line[1:].split(";"))
    _, rows = csvio.read_rows(path)
    tensors = {}
    for name, shape, values in rows:
        dims = tuple(int(s) for s in shape.split("x") if s != "")
        vals = np.array([float(v) for v in values.split()], dtype=np.float64)
        tensors[name] = vals.reshape(dims)
    return ToyModel(tensors["W1"], tensors["b1"], tensors["W2"], tensors["b2"], fingerprint=meta["fingerprint"],
                    dataset_fingerprint=meta["dataset"])


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: ExperimentConfig, out: Path) -> Path:
    cfg.require("population")
    p = cfg.population
    pool = gen_population(p.dim, p.num_classes, p.pool_size, p.class_scale, cfg.seed.child("pool"),
                          separation=p.separation)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "pool.csv"
    write_pool(path, pool, cfg.hash)
    return path


def cmd_train(cfg: ExperimentConfig, out: Path) -> list[Path]:
    bench = cfg.benchmark()
    pool = read_pool(out / "pool.csv", cfg)
    audit, target_ids, datasets, models = train_targets(bench, pool)
    (out / "models").mkdir(exist_ok=True)
    paths = []
    for tid, m in zip(target_ids, models):
        path = out / "models" / f"{tid}.csv"
        write_model(path, tid, m, cfg.hash)
        paths.append(path)
    csvio.write_rows(out / "targets.csv", ["model_id", "fingerprint", "dataset_fingerprint", "members"],
                     [[tid, m.fingerprint, ds.fingerprint, " ".join(str(r) for r in ds.record_ids)]
                      for tid, m, ds in zip(target_ids, models, datasets)], cfg.hash)
    csvio.write_rows(out / "audit.csv", ["record_id", "label"],
                     [[int(r), int(pool.labels[r])] for r in audit], cfg.hash)
    return paths


def _load_targets(cfg: ExperimentConfig, out: Path, pool: PopulationPool):
    _, rows = csvio.read_rows(_need(out / "targets.csv", "train"))
    _, arows = csvio.read_rows(_need(out / "audit.csv", "train"))
    audit = np.array([int(r[0]) for r in arows], dtype=np.int64)
    target_ids = [r[0] for r in rows]
    datasets = [Dataset(tuple(int(x) for x in r[3].split()), pool.ref) for r in rows]
    models = [read_model(out / "models" / f"{tid}.csv") for tid in target_ids]
    for tid, m, r in zip(target_ids, models, rows):
        if m.fingerprint != r[1]:
            raise ValidationError(f"model file for {tid} does not match targets.csv fingerprint")
    return audit, target_ids, datasets, models


def cmd_signals(cfg: ExperimentConfig, out: Path) -> list[Path]:
    bench = cfg.benchmark()
    pool = read_pool(out / "pool.csv", cfg)
    audit, target_ids, datasets, models = _load_targets(cfg, out, pool)
    sig = out / "signals"
    sig.mkdir(exist_ok=True)
    h = cfg.hash
    paths = [csvio.write_matrix(sig / "target.csv", target_signals(pool, audit, target_ids, datasets, models),
                                "External", config_hash=h, labels=pool.y(audit).tolist())]
    sets = build_outworlds(bench, pool, audit, target_ids, models)
    if "S" in sets:
        paths.append(sets["S"].export(sig / "shadow.csv", h))
    for ps in sets.get("P", []):
        paths.append(ps.export(sig / f"population-{ps.matrix.model_ids[0]}.csv", h))
    if "R" in sets:
        paths.append(sets["R"].export(sig / "reference.csv", h))
    for tid, ds in sets.get("D", {}).items():
        paths.append(ds.export(sig / f"distilled-{tid}.csv", h))
    return paths


def _load_signals(cfg: ExperimentConfig, out: Path):
    sig = out / "signals"
    target = ingest(_need(sig / "target.csv", "signals"))
    if target.matrix.membership is None:
        raise ValidationError(f"{sig / 'target.csv'}: membership companion file is missing")
    targets, truths = audit_targets(target.matrix, target.labels)
    sets: dict = {}
    kinds = cfg.attack.kinds
    if "S" in kinds:
        sets["S"] = ingest(_need(sig / "shadow.csv", "signals"))
    if "P" in kinds:
        sets["P"] = [ingest(_need(sig / f"population-{tid}.csv", "signals")) for tid in target.matrix.model_ids]
    if "R" in kinds:
        sets["R"] = ingest(_need(sig / "reference.csv", "signals"))
    if "D" in kinds:
        sets["D"] = {tid: ingest(_need(sig / f"distilled-{tid}.csv", "signals"))
                     for tid in target.matrix.model_ids}
    return target, targets, truths, sets


def cmd_attack(cfg: ExperimentConfig, out: Path) -> list[Path]:
    cfg.require("attack")
    _, targets, truths, sets = _load_signals(cfg, out)
    tfns = calibrate_all(sets, SmoothingMethod(cfg.attack.method))
    paths = []
    for kind, tfn in tfns.items():
        path = out / f"decisions_{kind}.csv"
        rows_t, rows_d, rows_m = [], [], []
        for a in cfg.attack.alphas:
            rows_t += targets
            rows_d += decide_batch(tfn, targets, a)
            rows_m += [int(t) for t in truths]
        write_decisions(path, kind, rows_t, rows_d, rows_m, config_hash=cfg.hash)
        paths.append(path)
    return paths


def _read_decisions(path: Path):
    """{alpha: {(model_id, record_id): (predicted, confidence)}}"""
    _, rows = csvio.read_rows(_need(path, "attack"))
    out: dict = {}
    for model_id, record_id, _, alpha, _, _, conf, pred, _ in rows:
        out.setdefault(float(alpha), {})[(model_id, int(record_id))] = (int(pred), float(conf))
    return out


def cmd_eval(cfg: ExperimentConfig, out: Path) -> list[Path]:
    cfg.require("attack")
    target, targets, truths, sets = _load_signals(cfg, out)
    tfns = calibrate_all(sets, SmoothingMethod(cfg.attack.method))
    h = cfg.hash
    paths, aucs, low_fpr = [], {}, {}
    for kind, tfn in tfns.items():
        curve = roc_score_sweep([-tfn.cdf(t) for t in targets], truths)
        aucs[kind] = curve.auc
        low_fpr[kind] = {f: tpr_at_fpr(curve, f) for f in (0.001, 0.01, 0.1)}
        paths.append(csvio.write_rows(out / f"roc_{kind}.csv", ["fpr", "tpr", "auc"],
                                      [[float(f), float(t), curve.auc] for f, t in zip(curve.fpr, curve.tpr)], h))

    decisions = {k: _read_decisions(out / f"decisions_{k}.csv") for k in tfns}
    keys = [(t.model_id, t.record_id) for t in targets]
    agree_rows, scatter_rows = [], []
    for a in cfg.attack.alphas:
        for split, want in (("train", True), ("test", False)):
            sel = [k for k, m in zip(keys, truths) if m == want]
            preds = {"GT": [int(want)] * len(sel)}
            preds.update({kind: [decisions[kind][a][k][0] for k in sel] for kind in tfns})
            table = agreement_table(preds, split)
            for i, na in enumerate(table.names):
                for j, nb in enumerate(table.names):
                    agree_rows.append([a, split, na, nb, float(table.rates[i, j])])
        for k, m in zip(keys, truths):
            scatter_rows.append([a, k[0], k[1], int(m)] + [decisions[kind][a][k][1] for kind in tfns])
    paths.append(csvio.write_rows(out / "agreement.csv", ["alpha", "split", "attack_a", "attack_b", "rate"],
                                  agree_rows, h))
    paths.append(csvio.write_rows(out / "confidence_scatter.csv",
                                  ["alpha", "model_id", "record_id", "member"] + [f"confidence_{k}" for k in tfns],
                                  scatter_rows, h))

    # out-world histograms behind the thresholds of one member and one non-member of the first target
    first = target.matrix.model_ids[0]
    picks = [next(t for t, m in zip(targets, truths) if t.model_id == first and m == want) for want in (True, False)]
    hist_rows = []
    for t in picks:
        for kind, tfn in tfns.items():
            dist = tfn.dist_for(t)
            hist_rows += [[kind, t.model_id, t.record_id, "outworld", float(v)] for v in dist.losses]
            hist_rows.append([kind, t.model_id, t.record_id, "target", t.loss])
            hist_rows += [[kind, t.model_id, t.record_id, f"threshold@{a!r}", tfn(t, a)] for a in cfg.attack.alphas]
    paths.append(csvio.write_rows(out / "loss_histograms.csv", ["attack", "model_id", "record_id", "series", "loss"],
                                  hist_rows, h))

    best = max(aucs, key=lambda k: aucs[k])
    lines = [f"#config={h}", f"method={cfg.attack.method}",
             f"targets={len(target.matrix.model_ids)} records={len(target.matrix.record_ids)}"]
    for kind in tfns:
        tp = " ".join(f"TPR@FPR={f!r}:{v:.4f}" for f, v in low_fpr[kind].items())
        lines.append(f"Attack {kind}: AUC={aucs[kind]:.4f} {tp}")
    lines.append(f"Attack {best} achieves the highest AUC score ({aucs[best]:.4f})")
    summary = out / "summary.txt"
    summary.write_text("\n".join(lines) + "\n")
    paths.append(summary)
    return paths


def _game_spec(cfg: ExperimentConfig) -> GameSpec:
    g, a = cfg.game, cfg.attack
    s = cfg.seed.child("game")
    return GameSpec(GameVariant(g.variant), g.n or a.n, g.trials, s.child("root"),
                    fixed_dataset_seed=s.child("fixed-dataset"), fixed_model_seed=s.child("fixed-model"),
                    fixed_record_seed=s.child("fixed-record"), fixed_record_id=g.fixed_record_id,
                    alpha=a.alphas[0])


def _rate(v) -> str:
    return "undefined" if v is None else f"{v:.4f}"


def cmd_game(cfg: ExperimentConfig, out: Path) -> Path:
    cfg.require("game", "attack", "training", "population")
    pool = read_pool(out / "pool.csv", cfg)
    spec = _game_spec(cfg)
    method = SmoothingMethod(cfg.attack.method)
    if cfg.game.adversary == "S":
        tfn = calibrate_S(ingest(_need(out / "signals" / "shadow.csv", "signals")), method)

        def adversary(model, record, ctx):
            t = Target(model.fingerprint, record.id, record.label, loss(model, record))
            return decide_batch(tfn, [t], ctx.alpha)[0]
    else:
        def adversary(model, record, ctx):
            ps = build_population(model, pool, cfg.attack.m_per_class,
                                  spec.trial_seed(ctx.trial_index).child("population"), exclude=(record.id,))
            t = Target(ps.matrix.model_ids[0], record.id, record.label, loss(model, record))
            return decide_batch(calibrate_P(ps, method), [t], ctx.alpha)[0]

    transcript = play(spec, adversary, pool, SGDTrainer(cfg.training))
    path = out / "transcript.csv"
    transcript.write_csv(path, cfg.hash)
    s = transcript.summary
    (out / "game_summary.txt").write_text(
        f"#config={cfg.hash}\nvariant={spec.variant.value} trials={spec.trials} adversary={cfg.game.adversary} "
        f"alpha={spec.alpha!r}\naccuracy={s['accuracy']:.4f} tpr={_rate(s['tpr'])} fpr={_rate(s['fpr'])}\n")
    return path


def cmd_lemma1(cfg: ExperimentConfig, out: Path) -> Path:
    cfg.require("lemma1")
    L = cfg.lemma1
    seed = cfg.seed.child("lemma1")
    pool = gen_population(1, 2, L.pool_size, L.class_scale, seed.child("pool"), separation=L.separation)
    res = lemma1_experiment(pool, L.n, L.temperature, L.trials, seed,
                            pconfig=PosteriorConfig(L.temperature, bound=L.bound), cells=L.cells,
                            n_datasets=L.n_datasets)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "lemma1.txt"
    path.write_text(f"#config={cfg.hash}\n"
                    f"auc_loss_threshold={res.auc_loss_threshold!r}\n"
                    f"auc_bayes_oracle={res.auc_bayes_oracle!r}\n"
                    f"gap={res.gap!r}\n"
                    f"posterior_mass_error={res.posterior_mass_error!r}\n"
                    f"trials={res.trials}\n")
    return path


def cmd_run(cfg: ExperimentConfig, out: Path) -> list[Path]:
    """synth, train, signals, attack, eval and (when configured) game."""
    paths = [cmd_synth(cfg, out)]
    for step in (cmd_train, cmd_signals, cmd_attack, cmd_eval):
        paths += step(cfg, out)
    if cfg.game is not None:
        paths.append(cmd_game(cfg, out))
    return paths


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "signals": cmd_signals, "attack": cmd_attack,
            "eval": cmd_eval, "game": cmd_game, "lemma1": cmd_lemma1, "run": cmd_run}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="INI-style experiment config")
    common.add_argument("--out", help="output directory (overrides [output] dir)")
    common.add_argument("--workers", type=int, default=1, help="training processes; outputs do not change")
    common.add_argument("--alpha", help="comma-separated FPR levels (overrides attack.alphas)")
    common.add_argument("--method", choices=[m.value for m in SmoothingMethod], help="smoothing method override")
    parser = argparse.ArgumentParser(prog="lossaudit", description="Loss-threshold membership inference audits.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or name).split("\n")[0])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, alphas=args.alpha, method=args.method, out=args.out)
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        set_workers(args.workers)
        COMMANDS[args.command](cfg, Path(cfg.out_dir))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"error: {exc}; lower training.learning_rate or set training.clip_norm", file=sys.stderr)
        return 1
    except (ValidationError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        set_workers(1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
