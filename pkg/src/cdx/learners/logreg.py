"""Multinomial logistic regression with an L2 penalty, fitted by L-BFGS."""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize

from ..serialization import encode_array
from .base import TrainedModel, arr, check_xy, register


def _softmax(Z):
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def objective(theta, X, Y, l2):
    """Summed cross-entropy plus ``l2/2 * ||W||^2`` (intercepts unpenalised)."""
    d = X.shape[1]
    K = Y.shape[1]
    W = theta[: K * d].reshape(K, d)
    b = theta[K * d :]
    Z = X @ W.T + b
    m = Z.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(Z - m).sum(axis=1, keepdims=True)))[:, 0]
    value = np.sum(lse - (Y * Z).sum(axis=1)) + 0.5 * l2 * np.sum(W * W)
    R = _softmax(Z) - Y
    gW = R.T @ X + l2 * W
    gb = R.sum(axis=0)
    return value, np.concatenate([gW.ravel(), gb])


@register("logreg")
class LogRegModel(TrainedModel):
    def __init__(self, W, b, classes, metadata):
        self.W = W
        self.b = b
        self.classes = classes
        self.n_features = W.shape[1]
        self.metadata = metadata

    def predict_proba(self, X):
        return _softmax(self._check(X) @ self.W.T + self.b)

    def _predict_index(self, X):
        return np.argmax(X @ self.W.T + self.b, axis=1)

    def _state(self):
        return {"W": encode_array(self.W), "b": encode_array(self.b)}

    @classmethod
    def _from_state(cls, state, classes, n_features, metadata):
        return cls(arr(state["W"]), arr(state["b"]), classes, metadata)


def logreg_fit(X, y, tol=1e-4, max_iter=101, l2=1.0):
    X, y, classes = check_xy(X, y)
    K, d = len(classes), X.shape[1]
    Y = (y[:, None] == classes[None, :]).astype(float)
    res = minimize(objective, np.zeros(K * d + K), args=(X, Y, l2), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": tol, "ftol": 0.0})
    W = res.x[: K * d].reshape(K, d)
    b = res.x[K * d :]
    meta = {"solver": "lbfgs", "tol": tol, "max_iter": max_iter, "l2": l2,
            "iterations": int(res.nit), "converged": bool(res.success), "loss": float(res.fun)}
    return LogRegModel(W, b, classes, meta)
