"""A VAE with a kernel-coupled low-dimensional embedding space.

Two models share one hand-rolled numpy training stack: a plain
variational autoencoder, and a coupled variant that learns a small
deterministic embedding space X tied to the VAE latents through
row-normalized squared-exponential kernel weights and a mean-matching
penalty. Training, sampling, interpolation and embedding export are
available through the `npvae` CLI or the scikit-learn style estimators.
"""

from .config import LossBreakdown, RunConfig
from .coupling import (
    KernelParams,
    ReferenceSet,
    ancestral_sample,
    interpolate,
    kernel_weights,
    moment_penalty,
    predict_ztilde,
)
from .data import DataSplit, load_mnist, synthetic_clusters
from .estimators import GaussianVAE, NonparametricVAE
from .rng import Rng, derive_seed
from .train import Trainer

__version__ = "0.1.0"

__all__ = [
    "DataSplit",
    "GaussianVAE",
    "KernelParams",
    "LossBreakdown",
    "NonparametricVAE",
    "ReferenceSet",
    "Rng",
    "RunConfig",
    "Trainer",
    "__version__",
    "ancestral_sample",
    "derive_seed",
    "interpolate",
    "kernel_weights",
    "load_mnist",
    "moment_penalty",
    "predict_ztilde",
    "synthetic_clusters",
]
