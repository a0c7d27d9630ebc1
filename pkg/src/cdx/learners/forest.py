"""Entropy decision trees and a bootstrap random forest."""

from __future__ import annotations

import math

import numpy as np

from ..serialization import encode_array
from .base import TrainedModel, arr, check_xy, register


def entropy(counts):
    counts = np.asarray(counts, dtype=float)
    total = counts.sum(axis=-1, keepdims=True)
    p = np.divide(counts, total, out=np.zeros_like(counts), where=total > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log2(p), 0.0)
    return terms.sum(axis=-1)


def best_split_on_feature(x, y_index, n_classes):
    """Best (gain, threshold) for one feature; ``None`` when x is constant."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    valid = np.flatnonzero(xs[:-1] < xs[1:])
    if valid.size == 0:
        return None
    onehot = np.zeros((x.size, n_classes))
    onehot[np.arange(x.size), y_index[order]] = 1.0
    left = np.cumsum(onehot, axis=0)[valid]
    total = onehot.sum(axis=0)
    right = total - left
    n = x.size
    nl = valid + 1.0
    gain = entropy(total) - (nl / n) * entropy(left) - ((n - nl) / n) * entropy(right)
    best = int(np.argmax(gain))
    pos = valid[best]
    return float(gain[best]), float((xs[pos] + xs[pos + 1]) / 2.0)


class Tree:
    """Flat array tree; ``feature == -1`` marks a leaf."""

    def __init__(self, feature, threshold, left, right, counts):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.counts = counts

    @property
    def depth(self):
        depth = np.zeros(len(self.feature), dtype=int)
        for node in range(len(self.feature)):
            if self.feature[node] >= 0:
                depth[self.left[node]] = depth[node] + 1
                depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def apply(self, X):
        node = np.zeros(X.shape[0], dtype=int)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            f = self.feature[node[rows]]
            go_left = X[rows, f] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])
            active = self.feature[node] >= 0
        return node

    def predict_index(self, X):
        return np.argmax(self.counts[self.apply(X)], axis=1)

    def to_json(self):
        return {
            "feature": self.feature.tolist(),
            "threshold": encode_array(self.threshold),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "counts": encode_array(self.counts),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(np.asarray(obj["feature"], int), arr(obj["threshold"]), np.asarray(obj["left"], int),
                   np.asarray(obj["right"], int), arr(obj["counts"]))


def _n_candidates(max_features, d):
    if max_features is None:
        return d
    if max_features == "sqrt":
        return max(1, math.ceil(math.sqrt(d)))
    return max(1, min(d, int(max_features)))


def grow_tree(X, y_index, n_classes, max_features=None, rng=None, min_samples_leaf=1):
    """Grow an entropy tree to purity.

    At each node ``max_features`` features are drawn without replacement;
    if none of them can split the node the remaining features are tried in
    random order.  Ties keep the first candidate and the lowest threshold.
    """
    n, d = X.shape
    m = _n_candidates(max_features, d)
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(np.bincount(y_index[idx], minlength=n_classes).astype(float))
        return len(feature) - 1

    stack = [(new_node(np.arange(n)), np.arange(n))]
    while stack:
        node, idx = stack.pop()
        if np.count_nonzero(counts[node]) <= 1 or idx.size < 2 * min_samples_leaf:
            continue
        perm = np.arange(d) if rng is None or m == d else rng.permutation(d)
        best = None
        for start in range(0, d, m):
            for f in perm[start : start + m]:
                res = best_split_on_feature(X[idx, f], y_index[idx], n_classes)
                if res is not None and (best is None or res[0] > best[0]):
                    best = (res[0], res[1], int(f))
            if best is not None:
                break
        if best is None:
            continue
        _, thr, f = best
        go_left = X[idx, f] <= thr
        feature[node], threshold[node] = f, thr
        li, ri = idx[go_left], idx[~go_left]
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri))
        stack.append((left[node], li))

    return Tree(np.array(feature, int), np.array(threshold, float), np.array(left, int),
                np.array(right, int), np.array(counts, float).reshape(len(feature), n_classes))


@register("tree")
class TreeModel(TrainedModel):
    def __init__(self, tree, classes, n_features, metadata):
        self.tree = tree
        self.classes = classes
        self.n_features = n_features
        self.metadata = metadata

    def _predict_index(self, X):
        return self.tree.predict_index(X)

    def _state(self):
        return {"tree": self.tree.to_json()}

    @classmethod
    def _from_state(cls, state, classes, n_features, metadata):
        return cls(Tree.from_json(state["tree"]), classes, n_features, metadata)


def tree_fit(X, y, max_features=None, seed=0):
    X, y, classes = check_xy(X, y, min_classes=1)
    y_index = np.searchsorted(classes, y)
    rng = np.random.default_rng(seed)
    tree = grow_tree(X, y_index, len(classes), max_features, rng)
    return TreeModel(tree, classes, X.shape[1], {"criterion": "entropy", "max_features": max_features})


@register("rf")
class ForestModel(TrainedModel):
    def __init__(self, trees, classes, n_features, metadata):
        self.trees = trees
        self.classes = classes
        self.n_features = n_features
        self.metadata = metadata

    def votes(self, X):
        X = self._check(X)
        V = np.zeros((X.shape[0], self.class_count), dtype=int)
        rows = np.arange(X.shape[0])
        for t in self.trees:
            np.add.at(V, (rows, t.predict_index(X)), 1)
        return V

    def _predict_index(self, X):
        return np.argmax(self.votes(X), axis=1)

    def _state(self):
        return {"trees": [t.to_json() for t in self.trees]}

    @classmethod
    def _from_state(cls, state, classes, n_features, metadata):
        return cls([Tree.from_json(t) for t in state["trees"]], classes, n_features, metadata)


def rf_fit(X, y, n_estimators=1000, criterion="entropy", max_features="sqrt", seed=0):
    if criterion != "entropy":
        raise ValueError("only the entropy criterion is implemented")
    X, y, classes = check_xy(X, y, min_classes=1)
    if X.shape[0] < 2:
        raise ValueError("random forest needs at least two samples")
    y_index = np.searchsorted(classes, y)
    trees = []
    for seq in np.random.SeedSequence(seed).spawn(n_estimators):
        rng = np.random.default_rng(seq)
        boot = rng.integers(0, X.shape[0], size=X.shape[0])
        trees.append(grow_tree(X[boot], y_index[boot], len(classes), max_features, rng))
    meta = {"n_estimators": n_estimators, "criterion": criterion, "max_features": max_features,
            "bootstrap": True, "seed": seed}
    return ForestModel(trees, classes, X.shape[1], meta)
