"""Kernel ridge regression on probability distributions observed through samples."""

from distreg.distributions import EmpiricalDistribution, RegressionDataset, load_dataset
from distreg.embeddings import (
    MeanLinear,
    MeanRFF,
    Sinkhorn,
    SlicedWasserstein,
    embed,
    embed_many,
    embedding_distance,
)
from distreg.kernel_ridge import KernelConfig, cross_validate, fit, predict, predict_many

__version__ = "0.1.0"

__all__ = [
    "EmpiricalDistribution", "KernelConfig", "MeanLinear", "MeanRFF", "RegressionDataset",
    "Sinkhorn", "SlicedWasserstein", "cross_validate", "embed", "embed_many",
    "embedding_distance", "fit", "load_dataset", "predict", "predict_many",
]
