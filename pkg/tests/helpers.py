"""Oracles shared across test modules."""

import itertools
import math

import numpy as np
from scipy.optimize import linear_sum_assignment

from cdx.learners.mlp import loss


def matched_abs_corr(A, B):
    """Mean |corr| between rows of A and B after the optimal one-to-one matching."""
    A = (A - A.mean(axis=1, keepdims=True)) / A.std(axis=1, keepdims=True)
    B = (B - B.mean(axis=1, keepdims=True)) / B.std(axis=1, keepdims=True)
    C = np.abs(A @ B.T) / A.shape[1]
    rows, cols = linear_sum_assignment(-C)
    return C[rows, cols], cols


def pearson_brute(X):
    """Entry-by-entry Pearson formula with explicit sums."""
    t, k = X.shape
    R = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            xi, xj = X[:, i], X[:, j]
            mi, mj = sum(xi) / t, sum(xj) / t
            num = sum((a - mi) * (b - mj) for a, b in zip(xi, xj))
            den = np.sqrt(sum((a - mi) ** 2 for a in xi) * sum((b - mj) ** 2 for b in xj))
            R[i, j] = num / den
    return R


def project_dual_feasible(a, y, c):
    """Exact Euclidean projection onto {0 <= a <= c, sum(a*y) = 0}.

    The constraint residual is piecewise linear and non-increasing in the
    multiplier; it is evaluated at every breakpoint and interpolated.
    """
    bps = np.unique(np.concatenate([a / y, (a - c) / y]))
    vals = np.sum(y * np.clip(a[None, :] - bps[:, None] * y[None, :], 0.0, c), axis=1)
    k = int(np.searchsorted(-vals, 0.0))  # first breakpoint with residual <= 0
    if k == 0:
        nu = bps[0]
    elif k == bps.size:
        nu = bps[-1]
    else:
        v0, v1 = vals[k - 1], vals[k]
        nu = bps[k - 1] + (bps[k] - bps[k - 1]) * v0 / (v0 - v1)
    return np.clip(a - nu * y, 0.0, c)


def dual_qp_oracle(K, y, c, iters=20000):
    """Accelerated projected gradient on the soft-margin dual; returns the maximised objective."""
    Q = (y[:, None] * y[None, :]) * K
    L = np.linalg.eigvalsh(Q).max()
    a = np.zeros(y.size)
    z, t = a.copy(), 1.0
    for _ in range(iters):
        a_new = project_dual_feasible(z - (Q @ z - 1.0) / L, y, c)
        t_new = (1 + np.sqrt(1 + 4 * t * t)) / 2
        z = a_new + (t - 1) / t_new * (a_new - a)
        a, t = a_new, t_new
    return a, float(a.sum() - 0.5 * a @ Q @ a)


def kkt_violation(K, y, alpha, b, c):
    """Largest violation of the soft-margin KKT conditions."""
    margin = y * (K @ (alpha * y) + b)
    at_zero, at_c = alpha <= 1e-12, alpha >= c - 1e-12
    free = ~at_zero & ~at_c
    v = np.zeros_like(alpha)
    v[at_zero] = np.maximum(0.0, 1.0 - margin[at_zero])
    v[at_c] = np.maximum(0.0, margin[at_c] - 1.0)
    v[free] = np.abs(margin[free] - 1.0)
    return v.max()


def knn_oracle(Xtr, ytr, x, k):
    """Exhaustive neighbour search with the documented tie rules, in plain Python."""
    d = [(math.dist(x, row), i) for i, row in enumerate(Xtr)]
    d.sort()
    near = d[:k]
    counts = {}
    for dist, i in near:
        counts.setdefault(int(ytr[i]), []).append(dist)
    top = max(len(v) for v in counts.values())
    tied = [c for c, v in counts.items() if len(v) == top]
    return min(tied, key=lambda c: (sum(counts[c]) / len(counts[c]), c))


def entropy_bits(labels):
    n = len(labels)
    out = 0.0
    for c in set(labels):
        p = labels.count(c) / n
        out -= p * math.log2(p)
    return out


def best_split_oracle(X, y):
    """Exhaustive (gain, feature, threshold) over every feature and midpoint."""
    y = list(map(int, y))
    base = entropy_bits(y)
    best = None
    for f in range(X.shape[1]):
        values = sorted(set(X[:, f]))
        for lo, hi in zip(values[:-1], values[1:]):
            thr = (lo + hi) / 2
            left = [c for v, c in zip(X[:, f], y) if v <= thr]
            right = [c for v, c in zip(X[:, f], y) if v > thr]
            gain = base - len(left) / len(y) * entropy_bits(left) - len(right) / len(y) * entropy_bits(right)
            if best is None or gain > best[0] + 1e-12:
                best = (gain, f, thr)
    return best


def stump_oracle(X, y, w, K):
    """Brute-force weighted-error stump over features, midpoints and leaf labels."""
    best = None
    for f in range(X.shape[1]):
        values = sorted(set(X[:, f]))
        for lo, hi in zip(values[:-1], values[1:]):
            thr = (lo + hi) / 2
            for a, b in itertools.product(range(K), repeat=2):
                pred = np.where(X[:, f] <= thr, a, b)
                err = w[pred != y].sum()
                if best is None or err < best[0] - 1e-15:
                    best = (err, pred)
    return best


def samme_oracle(X, y, K, rounds):
    n = len(y)
    w = np.full(n, 1 / n)
    weights, alphas, scores = [], [], np.zeros((n, K))
    staged = []
    for _ in range(rounds):
        err, pred = stump_oracle(X, y, w, K)
        alpha = math.log((1 - err) / err) + math.log(K - 1)
        weights.append(w.copy())
        alphas.append(alpha)
        scores[np.arange(n), pred] += alpha
        staged.append(scores.argmax(axis=1))
        w = w * np.exp(alpha * (pred != y))
        w /= w.sum()
    return weights, alphas, staged


def flat_params(params):
    return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in params])


def unflat_params(theta, like):
    out, pos = [], 0
    for W, b in like:
        Wn = theta[pos : pos + W.size].reshape(W.shape)
        pos += W.size
        bn = theta[pos : pos + b.size]
        pos += b.size
        out.append((Wn, bn))
    return out


def fd_gradient(spec, params, X, Y, h=1e-5):
    """Central finite differences of the mean loss over every parameter."""
    theta = flat_params(params)
    g = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        up = loss(spec, unflat_params(theta + e, params), X, Y)
        down = loss(spec, unflat_params(theta - e, params), X, Y)
        g[i] = (up - down) / (2 * h)
    return g
