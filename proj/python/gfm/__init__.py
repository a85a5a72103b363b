"""Graph flow matching on low-dimensional toy data.

The heavy lifting lives in the C++ extension ``gfm._core``; this package
re-exports it.
"""

from ._core import (
    METRICS_HEADER,
    ConfigError,
    ContractViolation,
    IoError,
    Model,
    NumericFailure,
    energy_distance,
    knn_recall,
    run_experiment,
    sample_source,
    sample_target,
    sliced_w2,
)

__version__ = "0.1.0"

__all__ = [
    "METRICS_HEADER",
    "ConfigError",
    "ContractViolation",
    "IoError",
    "Model",
    "NumericFailure",
    "energy_distance",
    "knn_recall",
    "run_experiment",
    "sample_source",
    "sample_target",
    "sliced_w2",
]
