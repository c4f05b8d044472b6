"""Loss-threshold membership inference auditing on a synthetic learning stack."""

from .core import Dataset, Record, SeedSpec, SignalMatrix, derive_seed, validate_matrix

__version__ = "0.1.0"
