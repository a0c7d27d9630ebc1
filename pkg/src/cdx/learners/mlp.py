"""Dense feed-forward network trained with Adam on categorical cross-entropy.

Outputs are sigmoid units; the cross-entropy normalises them to sum to one
before taking logs (the behaviour of Keras' ``categorical_crossentropy`` on
non-softmax outputs).  Prediction is the argmax output.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import NonFiniteLoss, ShapeMismatch
from ..serialization import encode_array
from .base import TrainedModel, arr, register

FMRI_LAYERS = (210, 105, 52, 26, 13, 6, 3, 2)
PHENO_LAYERS = (13, 11, 9, 7, 5, 4)


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple
    activations: tuple | None = None
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 100
    batch_size: int | None = None  # None = full batch
    seed: int = 0
    init: str = "glorot"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        acts = self.activations
        if acts is None:
            acts = ("relu",) * (len(sizes) - 2) + ("sigmoid",)
        acts = tuple(acts)
        object.__setattr__(self, "activations", acts)
        if len(acts) != len(sizes) - 1:
            raise ValueError("need one activation per weight layer")
        if acts[-1] != "sigmoid":
            raise ValueError("output activation must be sigmoid")
        if any(a not in ("relu", "sigmoid") for a in acts):
            raise ValueError(f"unsupported activation in {acts}")
        if self.init not in ("glorot", "zeros"):
            raise ValueError(f"unknown init {self.init!r}")


def init_params(spec):
    rng = np.random.default_rng(spec.seed)
    params = []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        if spec.init == "zeros":
            W = np.zeros((fan_in, fan_out))
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        params.append((W, np.zeros(fan_out)))
    return params


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def forward(spec, params, X):
    """Return the list of layer activations, input first."""
    acts = [X]
    a = X
    for (W, b), kind in zip(params, spec.activations):
        z = a @ W + b
        a = np.maximum(z, 0.0) if kind == "relu" else _sigmoid(z)
        acts.append(a)
    return acts


def _loss_terms(z_out, Y):
    log_sig = -np.logaddexp(0.0, -z_out)
    m = log_sig.max(axis=1, keepdims=True)
    log_total = (m + np.log(np.exp(log_sig - m).sum(axis=1, keepdims=True)))[:, 0]
    return -(Y * log_sig).sum(axis=1) + Y.sum(axis=1) * log_total


def _check_shapes(spec, X, Y):
    if X.ndim != 2 or X.shape[1] != spec.layer_sizes[0]:
        raise ShapeMismatch(f"X must have {spec.layer_sizes[0]} columns, got shape {X.shape}")
    if Y.shape != (X.shape[0], spec.layer_sizes[-1]):
        raise ShapeMismatch(f"Y must have shape ({X.shape[0]}, {spec.layer_sizes[-1]}), got {Y.shape}")


def loss(spec, params, X, Y, reduction="mean"):
    X, Y = np.asarray(X, float), np.asarray(Y, float)
    _check_shapes(spec, X, Y)
    a = X
    for (W, b), kind in zip(params, spec.activations):
        z = a @ W + b
        a = np.maximum(z, 0.0) if kind == "relu" else _sigmoid(z)
    per = _loss_terms(z, Y)
    return float(per.sum() if reduction == "sum" else per.mean())


def mlp_gradient(spec, params, X, Y, reduction="mean"):
    """Backpropagated gradient ``[(dW, db), ...]`` and the loss value."""
    X, Y = np.asarray(X, float), np.asarray(Y, float)
    _check_shapes(spec, X, Y)
    zs, acts = [], [X]
    a = X
    for (W, b), kind in zip(params, spec.activations):
        z = a @ W + b
        a = np.maximum(z, 0.0) if kind == "relu" else _sigmoid(z)
        zs.append(z)
        acts.append(a)
    per = _loss_terms(zs[-1], Y)
    scale = 1.0 if reduction == "sum" else 1.0 / X.shape[0]
    value = float(per.sum() * scale)

    sig = acts[-1]
    total = sig.sum(axis=1, keepdims=True)
    # d/dz of -sum y log(s_k / sum s) for sigmoid outputs s
    delta = (1.0 - sig) * (Y.sum(axis=1, keepdims=True) * sig / total - Y) * scale
    grads = [None] * len(params)
    for layer in range(len(params) - 1, -1, -1):
        W, _ = params[layer]
        grads[layer] = (acts[layer].T @ delta, delta.sum(axis=0))
        if layer > 0:
            delta = delta @ W.T
            kind = spec.activations[layer - 1]
            if kind == "relu":
                delta = delta * (zs[layer - 1] > 0)
            else:
                s = acts[layer]
                delta = delta * s * (1.0 - s)
    return grads, value


@register("mlp")
class MlpModel(TrainedModel):
    def __init__(self, spec, params, classes, metadata):
        self.spec = spec
        self.params = params
        self.classes = classes
        self.n_features = spec.layer_sizes[0]
        self.metadata = metadata

    def predict_proba(self, X):
        return forward(self.spec, self.params, self._check(X))[-1]

    def _predict_index(self, X):
        return np.argmax(forward(self.spec, self.params, X)[-1], axis=1)

    def _state(self):
        spec = asdict(self.spec)
        return {
            "spec": {**spec, "layer_sizes": list(spec["layer_sizes"]), "activations": list(spec["activations"])},
            "params": [{"W": encode_array(W), "b": encode_array(b)} for W, b in self.params],
        }

    @classmethod
    def _from_state(cls, state, classes, n_features, metadata):
        spec = MlpSpec(**{**state["spec"], "layer_sizes": tuple(state["spec"]["layer_sizes"]),
                          "activations": tuple(state["spec"]["activations"])})
        params = [(arr(p["W"]), arr(p["b"])) for p in state["params"]]
        return cls(spec, params, classes, metadata)


def mlp_fit(spec, X, Y, params=None):
    """Train for ``spec.max_epochs`` epochs; ``Y`` is one-hot."""
    X, Y = np.asarray(X, float), np.asarray(Y, float)
    _check_shapes(spec, X, Y)
    params = init_params(spec) if params is None else [(W.copy(), b.copy()) for W, b in params]
    m = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
    v = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
    rng = np.random.default_rng([spec.seed, 1])
    n = X.shape[0]
    batch = n if spec.batch_size is None else min(spec.batch_size, n)
    step = 0
    history = []
    for _ in range(spec.max_epochs):
        order = np.arange(n) if batch == n else rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            grads, value = mlp_gradient(spec, params, X[idx], Y[idx])
            if not np.isfinite(value):
                raise NonFiniteLoss(f"loss became {value} at step {step}")
            epoch_loss += value * len(idx)
            step += 1
            c1 = 1.0 - spec.beta1**step
            c2 = 1.0 - spec.beta2**step
            new = []
            for layer, ((W, b), (gW, gb)) in enumerate(zip(params, grads)):
                mW, mb = m[layer]
                vW, vb = v[layer]
                mW = spec.beta1 * mW + (1 - spec.beta1) * gW
                mb = spec.beta1 * mb + (1 - spec.beta1) * gb
                vW = spec.beta2 * vW + (1 - spec.beta2) * gW * gW
                vb = spec.beta2 * vb + (1 - spec.beta2) * gb * gb
                m[layer], v[layer] = (mW, mb), (vW, vb)
                W = W - spec.lr * (mW / c1) / (np.sqrt(vW / c2) + spec.eps)
                b = b - spec.lr * (mb / c1) / (np.sqrt(vb / c2) + spec.eps)
                new.append((W, b))
            params = new
        history.append(epoch_loss / n)
    final = loss(spec, params, X, Y)
    if not np.isfinite(final):
        raise NonFiniteLoss(f"final loss is {final}")
    meta = {
        "optimizer": "adam",
        "lr": spec.lr, "beta1": spec.beta1, "beta2": spec.beta2, "eps": spec.eps,
        "batch_size": spec.batch_size, "init": spec.init, "seed": spec.seed,
        "epochs": spec.max_epochs, "steps": step, "loss_history": history, "final_loss": final,
    }
    classes = np.arange(spec.layer_sizes[-1])
    return MlpModel(spec, params, classes, meta)
