"""Frequency-decoupled cross-modal knowledge distillation.

Feature vectors are split into low/high frequency bands with a real-input
DFT; the low band is distilled with MSE, the high band with log-compressed
MSE, scale gaps are removed by frequency-domain standardization, and shared
band classifiers align the two modalities' decision spaces.
"""

from .data import SyntheticConfig, generate, load_dataset, load_features, save_features
from .frequency import BandSplit, FrequencyBands, decompose, standardize, standardize_bands
from .losses import LossBreakdown, LossWeights, cross_entropy, logmse_loss, mse_loss
from .models import ModelBundle
from .numerics import SeededRng, Spectrum, cosine_similarity, irdft, rdft
from .train import ExperimentConfig, TrainReport, distill, evaluate, train_unimodal

__all__ = [
    "BandSplit",
    "ExperimentConfig",
    "FrequencyBands",
    "LossBreakdown",
    "LossWeights",
    "ModelBundle",
    "SeededRng",
    "Spectrum",
    "SyntheticConfig",
    "TrainReport",
    "cosine_similarity",
    "cross_entropy",
    "decompose",
    "distill",
    "evaluate",
    "generate",
    "irdft",
    "load_dataset",
    "load_features",
    "logmse_loss",
    "mse_loss",
    "rdft",
    "save_features",
    "standardize",
    "standardize_bands",
    "train_unimodal",
]

__version__ = "0.1.0"
