"""Audit reports: ROC/AUC, agreement, vulnerability analyses and the Bayes-oracle check."""

from .analysis import (AgreementTable, LossHistogram, VulnPartition, agreement, agreement_table,
                       cosine_distance, effective_fpr, latent_neighbors, loo_vulnerability, loss_histogram,
                       partition_records)
from .benchmark import (AuditRun, BenchmarkConfig, build_outworlds, calibrate_all, mean_aucs, run_audit,
                        target_signals, train_targets)
from .lemma1 import BayesOracle, Lemma1Result, OracleResolutionError, lemma1_experiment
from .roc import (DEFAULT_ALPHA_GRID, RocCurve, fpr_at_tpr, pairwise_auc, roc_alpha_sweep, roc_score_sweep,
                  tpr_at_fpr, trapezoid)
