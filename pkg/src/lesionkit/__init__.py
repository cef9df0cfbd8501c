"""Evaluation and ensembling toolkit for class-imbalanced classifiers.

Weighted accuracy and related metrics, inverse-frequency loss weighting,
lesion-group-aware cross-validation, unscaled multi-crop evaluation, an
RBF-SVM meta-learner over crop predictions and exhaustive ensemble-subset
search.
"""

from ._backend import BACKEND
from .balance import ClassWeights, DiagnosisWeights, balanced_batch_indices, class_weights, sample_weight
from .cropper import aggregate_mean, augment, crop_grid, extract_crops, flatten_crops
from .ensemble import EnsembleSpec, combine_average, combine_vote, final_predict, subset_search
from .ingest import ClassCounts, PredictionTensor, SampleManifest, class_counts, load_manifest, load_predictions
from .meta import MetaModel, meta_cv, meta_fit, rbf_kernel, svm_fit
from .metrics import accuracy, confusion_matrix, mean_auc_ovr, wacc
from .splits import FoldAssignment, fold_split, stratified_group_kfold
from .trainer import SoftmaxModel, TrainConfig, lr_at, predict_proba, train, weighted_ce_loss

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ClassCounts",
    "ClassWeights",
    "DiagnosisWeights",
    "EnsembleSpec",
    "FoldAssignment",
    "MetaModel",
    "PredictionTensor",
    "SampleManifest",
    "SoftmaxModel",
    "TrainConfig",
    "accuracy",
    "aggregate_mean",
    "augment",
    "balanced_batch_indices",
    "class_counts",
    "class_weights",
    "combine_average",
    "combine_vote",
    "confusion_matrix",
    "crop_grid",
    "extract_crops",
    "final_predict",
    "flatten_crops",
    "fold_split",
    "lr_at",
    "load_manifest",
    "load_predictions",
    "mean_auc_ovr",
    "meta_cv",
    "meta_fit",
    "predict_proba",
    "rbf_kernel",
    "sample_weight",
    "stratified_group_kfold",
    "subset_search",
    "svm_fit",
    "train",
    "wacc",
    "weighted_ce_loss",
]
