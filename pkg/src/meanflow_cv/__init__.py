"""Gradient-variance analysis and control-variate tangents for one-step flows.

The package studies the training variance of average-velocity ("mean flow")
models: analytic Gaussian-mixture conditionals, a tangent-mixing loss family
with a control-variate coefficient beta, per-batch gradient-variance and
semigradient-gap probes, closed-form and empirical estimators of the optimal
beta, and sliced-Wasserstein evaluation of one-step samplers on 2-D toys and
dense Gaussian mixtures.
"""

__version__ = "0.1.0"

from .datasets import DatasetSpec, InterpolantBatch, sample_interpolant
from .gmm import ConditionalStats, MixtureSpec, conditional_stats, marginal_velocity
from .losses import TangentPolicy, meanflow_loss, mixed_tangent, semigrad
from .net import EmaState, Mlp, load_checkpoint, save_checkpoint
from .swdist import SwConfig, sliced_wasserstein
from .trainer import RunRecord, TrainConfig, one_step_sample, sweep, train

__all__ = [
    "__version__",
    "ConditionalStats", "MixtureSpec", "conditional_stats", "marginal_velocity",
    "DatasetSpec", "InterpolantBatch", "sample_interpolant",
    "TangentPolicy", "meanflow_loss", "mixed_tangent", "semigrad",
    "EmaState", "Mlp", "load_checkpoint", "save_checkpoint",
    "SwConfig", "sliced_wasserstein",
    "RunRecord", "TrainConfig", "one_step_sample", "sweep", "train",
]
