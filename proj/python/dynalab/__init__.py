"""Desk-scale laboratory for model-based RL with unsupervised model adaptation.

The compiled core exposes the main operations:

- ``train(config_path, out_dir)``: seeded training runs with CSV metrics.
- ``sweep(config_path, axis, values, out_dir)``: one-axis hyperparameter sweeps.
- ``theory_check(instances, master_seed)``: exact return-gap bound verification
  on randomized tabular control problems.
- ``mmd2_unbiased(a, b, bandwidths)``: unbiased kernel divergence estimator.
- ``default_config()`` / ``metrics_header()``: configuration and CSV schema.
"""

from dynalab._core import (
    ConfigError,
    InputError,
    NumericalError,
    TrainingError,
    UsageError,
    default_config,
    metrics_header,
    mmd2_unbiased,
    sweep,
    theory_check,
    train,
    version,
)

__version__ = version()

__all__ = [
    "ConfigError",
    "InputError",
    "NumericalError",
    "TrainingError",
    "UsageError",
    "__version__",
    "default_config",
    "metrics_header",
    "mmd2_unbiased",
    "sweep",
    "theory_check",
    "train",
    "version",
]
