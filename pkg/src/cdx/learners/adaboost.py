"""Multi-class AdaBoost (SAMME) over depth-one decision stumps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..serialization import encode_array
from .base import TrainedModel, arr, check_xy, register

MIN_ERROR = 1e-10


@dataclass(frozen=True)
class Stump:
    feature: int  # -1: constant prediction ``left``
    threshold: float
    left: int
    right: int

    def predict_index(self, X):
        if self.feature < 0:
            return np.full(X.shape[0], self.left)
        return np.where(X[:, self.feature] <= self.threshold, self.left, self.right)


def fit_stump(X, y_index, w, n_classes):
    """Stump minimising weighted error; ties keep the first feature and lowest threshold."""
    class_w = np.bincount(y_index, weights=w, minlength=n_classes)
    best_err = w.sum() - class_w.max()
    best = Stump(-1, 0.0, int(np.argmax(class_w)), int(np.argmax(class_w)))
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        valid = np.flatnonzero(xs[:-1] < xs[1:])
        if valid.size == 0:
            continue
        W = np.zeros((xs.size, n_classes))
        W[np.arange(xs.size), y_index[order]] = w[order]
        left = np.cumsum(W, axis=0)[valid]
        right = class_w - left
        err = w.sum() - left.max(axis=1) - right.max(axis=1)
        k = int(np.argmin(err))
        if err[k] < best_err - 1e-15:
            pos = valid[k]
            best_err = err[k]
            best = Stump(f, float((xs[pos] + xs[pos + 1]) / 2), int(np.argmax(left[k])), int(np.argmax(right[k])))
    return best, float(best_err)


@register("adaboost")
class AdaBoostModel(TrainedModel):
    def __init__(self, stumps, alphas, classes, n_features, metadata):
        self.stumps = stumps
        self.alphas = alphas
        self.classes = classes
        self.n_features = n_features
        self.metadata = metadata

    def staged_scores(self, X):
        X = self._check(X)
        S = np.zeros((X.shape[0], self.class_count))
        rows = np.arange(X.shape[0])
        for stump, a in zip(self.stumps, self.alphas):
            S = S.copy()
            S[rows, stump.predict_index(X)] += a
            yield S

    def staged_predict(self, X):
        for S in self.staged_scores(X):
            yield np.asarray(self.classes)[np.argmax(S, axis=1)]

    def _predict_index(self, X):
        S = np.zeros((X.shape[0], self.class_count))
        rows = np.arange(X.shape[0])
        for stump, a in zip(self.stumps, self.alphas):
            S[rows, stump.predict_index(X)] += a
        return np.argmax(S, axis=1)

    def _state(self):
        return {"stumps": [s.__dict__ for s in self.stumps], "alphas": encode_array(np.asarray(self.alphas))}

    @classmethod
    def _from_state(cls, state, classes, n_features, metadata):
        return cls([Stump(**s) for s in state["stumps"]], list(arr(state["alphas"])), classes, n_features, metadata)


def adaboost_fit(X, y, n_rounds=50):
    """SAMME boosting.  Metadata keeps per-round errors and the sample weights each stump saw."""
    X, y, classes = check_xy(X, y, min_classes=1)
    y_index = np.searchsorted(classes, y)
    K = len(classes)
    n = X.shape[0]
    w = np.full(n, 1.0 / n)
    stumps, alphas, errors, weights = [], [], [], []
    stop = "max_rounds"
    for _ in range(n_rounds):
        stump, err = fit_stump(X, y_index, w, K)
        if K > 1 and err >= 1.0 - 1.0 / K:
            stop = "no_better_than_chance"
            if not stumps:
                # keep the majority stump so the model can still predict
                stumps.append(stump)
                alphas.append(1.0)
                errors.append(err)
                weights.append(w.tolist())
            break
        alpha = np.log((1.0 - err) / max(err, MIN_ERROR)) + np.log(max(K - 1, 1))
        stumps.append(stump)
        alphas.append(float(alpha))
        errors.append(err)
        weights.append(w.tolist())
        if err <= 0:
            stop = "perfect_fit"
            break
        miss = stump.predict_index(X) != y_index
        w = w * np.exp(alpha * miss)
        w = w / w.sum()
    meta = {"n_rounds": n_rounds, "rounds_run": len(stumps), "errors": errors,
            "sample_weights": weights, "stop_reason": stop, "algorithm": "SAMME"}
    return AdaBoostModel(stumps, alphas, classes, X.shape[1], meta)
