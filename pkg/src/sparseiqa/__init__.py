"""Full-reference image quality estimation from unsupervised sparse patch codes.

Train a sparse linear decoder on whitened 8x8 patches of generic images
(no labels needed), then score a distorted image against its reference by
the rank correlation of their suppressed hidden activations.
"""

from .decoder import (DecoderHyperparams, DecoderModel, TrainingTrace, encode,
                      export_filter_grid, kl_sparsity, mean_activation,
                      objective, train)
from .evaluation import (EvalConfig, EvalReport, LogisticParams,
                         compute_metrics, evaluate_database, fit_logistic,
                         histogram_distances, logistic_5param, significance)
from .lbfgs import lbfgs_minimize
from .model_io import load_model, save_model
from .preprocess import (ChannelImage, NormalizationStats, PatchBatch,
                         apply_normalization, fit_normalization,
                         load_channel_image, sample_random_patches,
                         select_channels, tile_nonoverlapping)
from .scorer import (QualityScore, SparseRepresentation, SuppressionPolicy,
                     quality_score, represent, spearman, suppress)

__version__ = "0.1.0"

__all__ = [
    "ChannelImage", "PatchBatch", "NormalizationStats",
    "select_channels", "load_channel_image", "sample_random_patches",
    "tile_nonoverlapping", "fit_normalization", "apply_normalization",
    "DecoderHyperparams", "DecoderModel", "TrainingTrace",
    "encode", "objective", "kl_sparsity", "mean_activation", "train",
    "export_filter_grid", "lbfgs_minimize",
    "SparseRepresentation", "QualityScore", "SuppressionPolicy",
    "represent", "suppress", "spearman", "quality_score",
    "LogisticParams", "EvalConfig", "EvalReport",
    "fit_logistic", "logistic_5param", "compute_metrics",
    "histogram_distances", "significance", "evaluate_database",
    "save_model", "load_model",
]
