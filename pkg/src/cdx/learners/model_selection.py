"""Stratified splitting, stratified k-fold and exhaustive grid search."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from ..errors import ClassTooSmall, FoldCount


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def _largest_remainder(counts, total):
    """Integer quotas proportional to ``counts`` summing to ``total``."""
    counts = np.asarray(counts, dtype=float)
    exact = counts * total / counts.sum()
    quota = np.floor(exact).astype(int)
    short = total - quota.sum()
    # biggest fractional part first, lower class index on ties
    order = sorted(range(len(counts)), key=lambda c: (-(exact[c] - quota[c]), c))
    for c in order[:short]:
        quota[c] += 1
    return quota


def stratified_split(ids, labels, test_fraction, seed):
    """Split ``ids`` into ``(train_ids, test_ids)`` preserving class proportions.

    The test size is ``round(n * test_fraction)``; each class contributes its
    proportional share rounded by largest remainder.  Returned ids keep the
    input order.
    """
    ids = list(ids)
    labels = np.asarray(labels)
    if len(ids) != labels.size:
        raise ValueError("ids and labels differ in length")
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size < 2:
        raise ClassTooSmall("stratified split needs at least two classes")
    if counts.min() < 2:
        raise ClassTooSmall(f"class {classes[np.argmin(counts)]} has fewer than 2 members")
    n_test = _round_half_up(labels.size * test_fraction)
    quota = _largest_remainder(counts, n_test)
    if np.any(quota < 1) or np.any(quota > counts - 1):
        raise ClassTooSmall("a class cannot place a member on both sides of the split")

    rng = np.random.default_rng(seed)
    is_test = np.zeros(labels.size, dtype=bool)
    for c, q in zip(classes, quota):
        members = np.flatnonzero(labels == c)
        is_test[rng.permutation(members)[:q]] = True
    train = [ids[i] for i in np.flatnonzero(~is_test)]
    test = [ids[i] for i in np.flatnonzero(is_test)]
    return train, test


def stratified_kfold(labels, k, seed):
    """Fold index (0..k-1) per sample, each class dealt round-robin over folds."""
    labels = np.asarray(labels)
    if k < 2:
        raise FoldCount(f"need at least 2 folds, got {k}")
    classes, counts = np.unique(labels, return_counts=True)
    if counts.min() < k:
        raise ClassTooSmall(f"class {classes[np.argmin(counts)]} has fewer than {k} members")
    rng = np.random.default_rng(seed)
    folds = np.empty(labels.size, dtype=int)
    offset = 0
    for c in classes:
        members = rng.permutation(np.flatnonzero(labels == c))
        folds[members] = (offset + np.arange(members.size)) % k
        offset += members.size
    return folds


def cross_val_accuracy(fit, X, y, folds=5, seed=0):
    X, y = np.asarray(X, float), np.asarray(y)
    assignment = stratified_kfold(y, folds, seed)
    accs = []
    for f in range(folds):
        test = assignment == f
        model = fit(X[~test], y[~test])
        accs.append(float(np.mean(model.predict(X[test]) == y[test])))
    return accs


def lattice(grid):
    """Cells of a parameter grid in product order (first key varies slowest)."""
    if isinstance(grid, dict):
        keys = list(grid)
        return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]
    return [dict(cell) for cell in grid]


@dataclass
class GridResult:
    best_params: dict
    best_score: float
    table: list  # [{"params": ..., "mean": ..., "folds": [...]}] in lattice order


def grid_search(family, grid, X, y, folds=5, seed=0):
    """Exhaustive stratified-CV search.

    ``family`` is a registered model name (see :func:`fit_family`) or a
    callable ``(params, X, y) -> model``.  The first cell with the highest
    mean accuracy wins.
    """
    cells = lattice(grid)
    if not cells:
        raise ValueError("parameter grid is empty")
    fit_cell = family if callable(family) else (lambda p, X_, y_: fit_family(family, p, X_, y_))
    table = []
    for params in cells:
        accs = cross_val_accuracy(lambda X_, y_: fit_cell(params, X_, y_), X, y, folds, seed)
        table.append({"params": params, "mean": float(np.mean(accs)), "folds": accs})
    best = max(range(len(table)), key=lambda i: (table[i]["mean"], -i))
    return GridResult(table[best]["params"], table[best]["mean"], table)


DEFAULT_SVM_GRID = {
    "c": [1.0, 10.0, 100.0, 1000.0],
    "gamma": [round(0.01 * i, 2) for i in range(1, 11)],
}


def fit_family(name, params, X, y):
    """Fit one of the six classifier families from a flat parameter dict."""
    from ..phenotypic import one_hot
    from .adaboost import adaboost_fit
    from .forest import rf_fit
    from .knn import knn_fit
    from .logreg import logreg_fit
    from .mlp import FMRI_LAYERS, PHENO_LAYERS, MlpSpec, mlp_fit
    from .svm import SvmSpec, svm_fit

    params = dict(params)
    X = np.asarray(X, float)
    if name == "svm":
        return svm_fit(SvmSpec(**params), X, y)
    if name == "logreg":
        return logreg_fit(X, y, **params)
    if name == "knn":
        return knn_fit(X, y, **params)
    if name == "rf":
        return rf_fit(X, y, **params)
    if name == "adaboost":
        return adaboost_fit(X, y, **params)
    if name == "mlp":
        y = np.asarray(y, dtype=int)
        n_classes = int(params.pop("n_classes", y.max() + 1))
        if "layer_sizes" not in params:
            for arch in (FMRI_LAYERS, PHENO_LAYERS):
                if arch[0] == X.shape[1] and arch[-1] == n_classes:
                    params["layer_sizes"] = arch
                    break
            else:
                raise ValueError(f"no default architecture for {X.shape[1]} inputs / {n_classes} classes")
        if "activations" in params and params["activations"] is not None:
            params["activations"] = tuple(params["activations"])
        return mlp_fit(MlpSpec(**params), X, one_hot(y, n_classes))
    raise ValueError(f"unknown model family {name!r}")
