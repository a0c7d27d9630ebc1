"""k-nearest-neighbour classification by exhaustive Euclidean search."""

from __future__ import annotations

import numpy as np

from ..errors import KTooLarge
from ..serialization import encode_array
from .base import TrainedModel, arr, check_xy, register


@register("knn")
class KnnModel(TrainedModel):
    def __init__(self, X, y_index, classes, k, metadata=None):
        self.X = X
        self.y_index = y_index
        self.classes = classes
        self.k = k
        self.n_features = X.shape[1]
        self.metadata = metadata or {"k": k}

    def neighbors(self, X):
        """Indices and distances of the ``k`` nearest training rows (ties by index)."""
        X = self._check(X)
        D = np.sqrt(((X[:, None, :] - self.X[None, :, :]) ** 2).sum(axis=2))
        idx = np.argsort(D, axis=1, kind="stable")[:, : self.k]
        return idx, np.take_along_axis(D, idx, axis=1)

    def _predict_index(self, X):
        idx, dist = self.neighbors(X)
        out = np.empty(X.shape[0], dtype=int)
        for r in range(X.shape[0]):
            labels = self.y_index[idx[r]]
            counts = np.bincount(labels, minlength=self.class_count)
            tied = np.flatnonzero(counts == counts.max())
            if tied.size == 1:
                out[r] = tied[0]
                continue
            mean_d = np.array([dist[r][labels == c].mean() for c in tied])
            # lowest mean distance, then lowest class index
            out[r] = tied[np.argmin(mean_d)]
        return out

    def _state(self):
        return {"X": encode_array(self.X), "y_index": self.y_index.tolist(), "k": self.k}

    @classmethod
    def _from_state(cls, state, classes, n_features, metadata):
        return cls(arr(state["X"]), np.asarray(state["y_index"], dtype=int), classes, state["k"], metadata)


def knn_fit(X, y, k=18):
    X, y, classes = check_xy(X, y, min_classes=1)
    if not 1 <= k <= X.shape[0]:
        raise KTooLarge(f"k={k} must lie in 1..{X.shape[0]}")
    y_index = np.searchsorted(classes, y)
    return KnnModel(X, y_index, classes, k, {"k": k, "metric": "euclidean"})


def knn_sweep(X_train, y_train, X_test, y_test, ks=range(1, 27)):
    """``[(k, accuracy), ...]`` over the given neighbourhood sizes."""
    y_test = np.asarray(y_test)
    return [(int(k), float(np.mean(knn_fit(X_train, y_train, k).predict(X_test) == y_test))) for k in ks]
