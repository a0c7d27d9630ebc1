"""Uniform predict contract and JSON (de)serialisation for fitted models."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ShapeMismatch, SingleClass
from ..serialization import decode_array, dumps

_REGISTRY = {}


def register(kind):
    def deco(cls):
        cls.kind = kind
        _REGISTRY[kind] = cls
        return cls

    return deco


class TrainedModel:
    """Base for fitted classifiers.

    Subclasses provide ``classes`` (sorted label values), ``n_features``,
    ``metadata``, ``_predict_index`` (row -> class position) and the
    ``_state``/``_from_state`` pair used for JSON round trips.
    """

    kind = "base"

    @property
    def class_count(self):
        return len(self.classes)

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ShapeMismatch(f"model expects {self.n_features} features, got {X.shape[1]}")
        return X

    def predict(self, X):
        X = self._check(X)
        return np.asarray(self.classes)[self._predict_index(X)]

    def to_json(self):
        return {
            "kind": self.kind,
            "classes": [int(c) for c in self.classes],
            "n_features": int(self.n_features),
            "metadata": self.metadata,
            "state": self._state(),
        }

    def save(self, path):
        Path(path).write_text(dumps(self.to_json()))


def model_from_json(obj):
    cls = _REGISTRY[obj["kind"]]
    return cls._from_state(obj["state"], np.asarray(obj["classes"], dtype=int),
                           obj["n_features"], obj["metadata"])


def load_model(path):
    return model_from_json(json.loads(Path(path).read_text()))


def check_xy(X, y, min_classes=2):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2:
        raise ShapeMismatch("X must be 2D")
    if y.shape != (X.shape[0],):
        raise ShapeMismatch(f"y has shape {y.shape}, expected ({X.shape[0]},)")
    classes = np.unique(y)
    if len(classes) < min_classes:
        raise SingleClass(f"need at least {min_classes} classes, got {len(classes)}")
    return X, y.astype(int), classes


def arr(obj):
    return decode_array(obj)
