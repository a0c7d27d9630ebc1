"""Classifiers with a uniform ``predict`` contract, plus model selection."""

from .adaboost import AdaBoostModel, adaboost_fit
from .base import TrainedModel, load_model, model_from_json
from .forest import ForestModel, TreeModel, rf_fit, tree_fit
from .knn import KnnModel, knn_fit, knn_sweep
from .logreg import LogRegModel, logreg_fit
from .mlp import FMRI_LAYERS, PHENO_LAYERS, MlpModel, MlpSpec, mlp_fit, mlp_gradient
from .model_selection import (
    DEFAULT_SVM_GRID,
    GridResult,
    fit_family,
    grid_search,
    stratified_kfold,
    stratified_split,
)
from .svm import SvmModel, SvmSpec, svm_fit

FAMILIES = ("mlp", "svm", "logreg", "knn", "rf", "adaboost")

__all__ = [
    "AdaBoostModel", "DEFAULT_SVM_GRID", "FAMILIES", "FMRI_LAYERS", "ForestModel", "GridResult",
    "KnnModel", "LogRegModel", "MlpModel", "MlpSpec", "PHENO_LAYERS", "SvmModel", "SvmSpec",
    "TrainedModel", "TreeModel", "adaboost_fit", "fit_family", "grid_search", "knn_fit", "knn_sweep",
    "load_model", "logreg_fit", "mlp_fit", "mlp_gradient", "model_from_json", "rf_fit",
    "stratified_kfold", "stratified_split", "svm_fit", "tree_fit",
]
