"""Loss-threshold attack versus the exact likelihood-ratio test on a tiny model.

Models are binary logistic regressions (class-0 parameters pinned at zero)
sampled from the Gibbs posterior exp(-(1/T) * sum loss) on a bounded box.
The oracle evaluates

    LR(theta, z) = E_{D' not containing z, |D'| = n-1}[P(theta | D' + z)]
                   / E_{D not containing z, |D| = n}[P(theta | D)]

with every normaliser computed by midpoint quadrature over a parameter
grid, and with the expectations estimated from a fixed bank of sampled
datasets (datasets containing z are masked out).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..attacks import AttackDecision
from ..core import SeedSpec, ValidationError
from ..games import GameSpec, GameVariant, PosteriorTrainer, play
from ..synth import PopulationPool, PosteriorConfig, ToyModel, loss, sample_dataset
from .roc import roc_score_sweep


class OracleResolutionError(RuntimeError):
    pass


def _softplus(x):
    return np.logaddexp(0.0, x)


class BayesOracle:
    """Exact-posterior likelihood ratio on a ``cells`` x ``cells`` grid (d = 1, K = 2)."""

    def __init__(self, pool: PopulationPool, n: int, temperature: float, bound: float, cells: int,
                 n_datasets: int, seed: SeedSpec):
        if pool.num_classes != 2 or pool.dim != 1:
            raise ValidationError("oracle supports K = 2 and d = 1 only")
        if cells < 400:
            raise ValidationError("oracle grid needs at least 400 cells per axis")
        self.pool, self.n, self.T, self.bound, self.cells = pool, n, temperature, bound, cells
        self.grid, self.log_cell = self._make_grid(cells)
        self.h0_sets = [sample_dataset(pool, n, seed.child("h0", j)).record_ids for j in range(n_datasets)]
        self.h1_sets = [sample_dataset(pool, n - 1, seed.child("h1", j)).record_ids for j in range(n_datasets)]
        self._h0_logZ = np.array([self._log_normaliser(ids, self.grid, self.log_cell) for ids in self.h0_sets])
        # shifted unnormalised H1 densities, one row per dataset
        neg_e = np.stack([-self._grid_energy(ids, self.grid) for ids in self.h1_sets])
        self._h1_shift = neg_e.max(axis=1)
        self._h1_dens = np.exp(neg_e - self._h1_shift[:, None])
        self._h0_member = self._membership(self.h0_sets)
        self._h1_member = self._membership(self.h1_sets)

    def _make_grid(self, cells):
        d = self.pool.dim
        h = 2 * self.bound / cells
        axis = -self.bound + h * (np.arange(cells) + 0.5)
        mesh = np.meshgrid(*([axis] * (d + 1)), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1), (d + 1) * math.log(h)

    def _record_grid_loss(self, rid: int, grid: np.ndarray) -> np.ndarray:
        x = self.pool.features[rid]
        s = grid[:, :-1] @ x + grid[:, -1]  # class-1 logit minus class-0 logit
        return _softplus(-s) if self.pool.labels[rid] == 1 else _softplus(s)

    def _grid_energy(self, ids, grid) -> np.ndarray:
        e = np.zeros(len(grid))
        for rid in ids:
            e += self._record_grid_loss(rid, grid)
        return e / self.T

    def _log_normaliser(self, ids, grid, log_cell) -> float:
        return float(logsumexp(-self._grid_energy(ids, grid)) + log_cell)

    def _membership(self, sets) -> np.ndarray:
        m = np.zeros((len(sets), self.pool.size), dtype=bool)
        for j, ids in enumerate(sets):
            m[j, list(ids)] = True
        return m

    def self_test(self, n_check: int = 8) -> float:
        """Mass of the grid-normalised posterior under a 2x finer grid, minus one (max abs)."""
        fine, log_fine = self._make_grid(2 * self.cells)
        worst = 0.0
        for ids in self.h0_sets[:n_check]:
            coarse = self._log_normaliser(ids, self.grid, self.log_cell)
            refined = self._log_normaliser(ids, fine, log_fine)
            worst = max(worst, abs(math.expm1(refined - coarse)))
        return worst

    def _theta(self, model: ToyModel) -> np.ndarray:
        return np.r_[model.W2[1] - model.W2[0], model.b2[1] - model.b2[0]]

    def log_lr(self, models, records, chunk: int = 64) -> np.ndarray:
        """log LR(theta, z) (member over non-member) for aligned models and records."""
        out = np.empty(len(models))
        pool = self.pool
        X, y = pool.features, pool.labels
        h0_ind = self._h0_member.astype(np.float64).T  # (N, M)
        h1_ind = self._h1_member.astype(np.float64).T
        for start in range(0, len(models), chunk):
            ms = models[start:start + chunk]
            rs = records[start:start + chunk]
            thetas = np.stack([self._theta(m) for m in ms])  # (c, d+1)
            s = X @ thetas[:, :-1].T + thetas[:, -1]  # (N, c)
            pool_loss = np.where(y[:, None] == 1, _softplus(-s), _softplus(s)).T / self.T  # (c, N)
            e0 = pool_loss @ h0_ind  # (c, M0) energies at theta
            e1 = pool_loss @ h1_ind
            zl = np.stack([self._record_grid_loss(r.id, self.grid) / self.T for r in rs])  # (c, G)
            zmin = zl.min(axis=1)
            w = np.exp(-(zl - zmin[:, None]))
            dens = self._h1_dens @ w.T  # (M1, c)
            with np.errstate(divide="ignore"):
                log_z1 = (np.log(dens) + self._h1_shift[:, None] - zmin[None, :] + self.log_cell).T  # (c, M1)
            for j, r in enumerate(rs):
                bad = ~np.isfinite(log_z1[j])
                for k in np.flatnonzero(bad):
                    log_z1[j, k] = self._log_normaliser(self.h1_sets[k] + (r.id,), self.grid, self.log_cell)
                z_loss = pool_loss[j, r.id]
                keep1 = ~self._h1_member[:, r.id]
                keep0 = ~self._h0_member[:, r.id]
                l1 = logsumexp(-(e1[j, keep1] + z_loss) - log_z1[j, keep1]) - math.log(keep1.sum())
                l0 = logsumexp(-e0[j, keep0] - self._h0_logZ[keep0]) - math.log(keep0.sum())
                out[start + j] = l1 - l0
        return out


@dataclass(frozen=True)
class Lemma1Result:
    auc_loss_threshold: float
    auc_bayes_oracle: float
    gap: float
    posterior_mass_error: float
    trials: int


def lemma1_experiment(pool: PopulationPool, n: int, temperature: float, trials: int, seed: SeedSpec, *,
                      pconfig: PosteriorConfig | None = None, cells: int = 400, n_datasets: int = 128,
                      mass_tolerance: float = 1e-3) -> Lemma1Result:
    """Play the average-case game with posterior-sampled models against two adversaries.

    Adversary A thresholds the loss; adversary B computes the likelihood
    ratio exactly (up to the dataset bank). Returns both score-sweep AUCs.
    """
    if pool.num_classes != 2 or pool.dim != 1 or n > 16:
        raise ValidationError("lemma-1 experiment is limited to K = 2, d = 1, n <= 16")
    pc = pconfig or PosteriorConfig(temperature=temperature)
    if pc.temperature != temperature:
        pc = PosteriorConfig(temperature, pc.step_size, pc.burn_in, pc.thin, pc.seed, pc.bound)
    spec = GameSpec(GameVariant.AVERAGE_ALL, n, trials, seed.child("game"))

    def loss_adversary(model, record, ctx):
        l = loss(model, record)
        c = temperature  # any constant works; only the score enters the AUC
        return AttackDecision(int(l <= c), l, c, ctx.alpha)

    transcript = play(spec, loss_adversary, pool, PosteriorTrainer(pc))
    oracle = BayesOracle(pool, n, temperature, pc.bound, cells, n_datasets, seed.child("oracle"))
    mass_error = oracle.self_test()
    if mass_error > mass_tolerance:
        raise OracleResolutionError(f"posterior mass deviates from 1 by {mass_error:.2e} at {cells} cells")
    truths = transcript.bits().astype(bool)
    a_scores = np.array([e.score for e in transcript.entries])
    b_scores = oracle.log_lr([e.challenge.model for e in transcript.entries],
                             [e.challenge.record for e in transcript.entries])
    auc_a = roc_score_sweep(a_scores, truths).auc
    auc_b = roc_score_sweep(b_scores, truths).auc
    return Lemma1Result(auc_a, auc_b, auc_b - auc_a, mass_error, trials)
