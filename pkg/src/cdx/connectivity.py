"""Functional connectivity: correlation, partial correlation and tangent embedding."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import (
    FoldCount,
    NotPositiveDefinite,
    NotSymmetric,
    SingularCovariance,
    TooFewTimepoints,
)

MEASURES = ("correlation", "partial", "tangent")


@dataclass(frozen=True, eq=False)
class ConnectivityMatrix:
    measure: str
    values: np.ndarray
    flagged: tuple = ()  # regions with zero temporal variance

    @property
    def k(self):
        return self.values.shape[0]


def _series(ts):
    X = np.asarray(getattr(ts, "series", ts), dtype=float)
    if X.ndim != 2:
        raise ValueError("time series must be a (t x k) matrix")
    if X.shape[0] < 3:
        raise TooFewTimepoints(f"need at least 3 timepoints, got {X.shape[0]}")
    return X


def _symmetrize(M):
    return (M + M.T) / 2


def correlation_matrix(ts):
    """Pearson correlation between region columns."""
    X = _series(ts)
    Xc = X - X.mean(axis=0)
    norms = np.sqrt(np.einsum("ij,ij->j", Xc, Xc))
    dead = norms <= 1e-12 * max(1.0, norms.max(initial=0.0))
    safe = np.where(dead, 1.0, norms)
    R = (Xc.T @ Xc) / np.outer(safe, safe)
    R[dead, :] = 0.0
    R[:, dead] = 0.0
    R = np.clip(_symmetrize(R), -1.0, 1.0)
    np.fill_diagonal(R, 1.0)
    return ConnectivityMatrix("correlation", R, tuple(int(i) for i in np.flatnonzero(dead)))


def ledoit_wolf(X):
    """Shrunk covariance toward ``mean(diag(S)) * I`` with the analytic LW intensity.

    Returns ``(shrunk, shrinkage)``; ``X`` is (samples x variables).
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    X = X - X.mean(axis=0)
    S = X.T @ X / n
    mu = np.trace(S) / p
    # squared Frobenius distances, normalised by p as Ledoit and Wolf do
    delta = np.sum((S - mu * np.eye(p)) ** 2) / p
    X2 = X * X
    beta = (np.sum(X2.T @ X2) / n - np.sum(S * S)) / (n * p)
    beta = min(beta, delta)
    shrinkage = 0.0 if delta == 0 else beta / delta
    shrunk = (1.0 - shrinkage) * S
    shrunk[np.diag_indices(p)] += shrinkage * mu
    return shrunk, shrinkage


def partial_correlation(ts):
    X = _series(ts)
    cov, _ = ledoit_wolf(X)
    try:
        P = np.linalg.inv(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(str(exc)) from exc
    d = np.diag(P)
    if not np.all(np.isfinite(P)) or np.any(d <= 0):
        raise SingularCovariance("shrunk covariance is not invertible")
    R = -P / np.sqrt(np.outer(d, d))
    R = np.clip(_symmetrize(R), -1.0, 1.0)
    np.fill_diagonal(R, 1.0)
    return ConnectivityMatrix("partial", R)


# SPD matrix functions via the symmetric eigendecomposition.
def _eig_spd(C):
    w, v = np.linalg.eigh(_symmetrize(C))
    if w.min() <= 0 or not np.all(np.isfinite(w)):
        raise NotPositiveDefinite(f"matrix is not positive definite (min eigenvalue {w.min():.3g})")
    return w, v


def spd_log(C):
    w, v = _eig_spd(C)
    return (v * np.log(w)) @ v.T


def spd_exp(S):
    w, v = np.linalg.eigh(_symmetrize(S))
    return (v * np.exp(w)) @ v.T


def spd_invsqrt(C):
    w, v = _eig_spd(C)
    return (v / np.sqrt(w)) @ v.T


def log_euclidean_mean(covs):
    return spd_exp(np.mean([spd_log(C) for C in covs], axis=0))


def tangent_from_covariances(covs, reference=None):
    """Tangent vectors (as symmetric matrices) of SPD ``covs`` at ``reference``.

    The reference defaults to the log-Euclidean mean of ``covs``.
    """
    if reference is None:
        reference = log_euclidean_mean(covs)
    W = spd_invsqrt(reference)
    return [_symmetrize(spd_log(W @ C @ W)) for C in covs], reference


def shrunk_covariances(all_ts):
    return [ledoit_wolf(_series(ts))[0] for ts in all_ts]


def tangent_embedding(all_ts, reference=None):
    """Returns ``(matrices, reference)``; pass the training reference for test subjects."""
    if reference is None and len(all_ts) < 2:
        raise ValueError("fitting a tangent reference needs at least two subjects")
    mats, ref = tangent_from_covariances(shrunk_covariances(all_ts), reference)
    return [ConnectivityMatrix("tangent", M) for M in mats], ref


def connectivity_matrices(all_ts, measure, reference=None):
    if measure == "correlation":
        return [correlation_matrix(ts) for ts in all_ts], None
    if measure == "partial":
        return [partial_correlation(ts) for ts in all_ts], None
    if measure == "tangent":
        return tangent_embedding(all_ts, reference)
    raise ValueError(f"unknown measure {measure!r}")


def vectorize(M):
    """Upper triangle including the diagonal, row-major."""
    M = np.asarray(getattr(M, "values", M), dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NotSymmetric("matrix must be square")
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-8):
        raise NotSymmetric("matrix is not symmetric within 1e-8")
    return M[np.triu_indices(M.shape[0])]


def devectorize(v):
    v = np.asarray(v, dtype=float)
    k = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    if k * (k + 1) // 2 != v.size:
        raise ValueError(f"length {v.size} is not a triangular number")
    M = np.zeros((k, k))
    M[np.triu_indices(k)] = v
    return M + np.triu(M, 1).T


def vectorize_all(mats):
    return np.vstack([vectorize(m) for m in mats])


def threshold_edges(M, strength_fraction=0.8, mode="quantile"):
    """Strongest off-diagonal edges as ``(i, j, weight)`` with ``i < j``.

    ``quantile`` keeps the top ``1 - strength_fraction`` share of pairs by
    ``|weight|`` (ties resolved in (i, j) order); ``absolute`` keeps pairs with
    ``|weight| > strength_fraction``.
    """
    M = np.asarray(getattr(M, "values", M), dtype=float)
    iu, ju = np.triu_indices(M.shape[0], k=1)
    w = M[iu, ju]
    if mode == "quantile":
        n_keep = int(round((1.0 - strength_fraction) * w.size))
        keep = np.sort(np.argsort(-np.abs(w), kind="stable")[:n_keep])
    elif mode == "absolute":
        keep = np.flatnonzero(np.abs(w) > strength_fraction)
    else:
        raise ValueError(f"unknown threshold mode {mode!r}")
    return [(int(iu[e]), int(ju[e]), float(w[e])) for e in keep]


def write_edges_csv(edges, path, centroids=None):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        header = ["i", "j", "weight"]
        if centroids is not None:
            header += ["xi", "yi", "zi", "xj", "yj", "zj"]
        out.writerow(header)
        for i, j, w in edges:
            row = [i, j, repr(w)]
            if centroids is not None:
                row += [repr(float(c)) for c in (*centroids[i], *centroids[j])]
            out.writerow(row)


def write_matrix_csv(M, path):
    M = np.asarray(getattr(M, "values", M), dtype=float)
    np.savetxt(path, M, delimiter=",", fmt="%.17g")


def compare_measures(all_ts, labels, folds=5, seed=0, c=1.0, measures=MEASURES):
    """Stratified k-fold accuracy of a linear SVM per connectivity measure.

    Tangent references are refit on each training fold.  Returns
    ``{measure: {"mean": acc, "folds": [...]}}`` plus the fold count.
    """
    from .learners.model_selection import stratified_kfold
    from .learners.svm import SvmSpec, svm_fit

    if folds < 2:
        raise FoldCount(f"need at least 2 folds, got {folds}")
    labels = np.asarray(labels)
    assignment = stratified_kfold(labels, folds, seed)
    fixed = {m: vectorize_all(connectivity_matrices(all_ts, m)[0]) for m in measures if m != "tangent"}
    covs = shrunk_covariances(all_ts) if "tangent" in measures else None
    spec = SvmSpec(c=c, kernel="linear")

    table = {}
    for m in measures:
        accs = []
        for f in range(folds):
            test = assignment == f
            train = ~test
            if m == "tangent":
                tr_mats, ref = tangent_from_covariances([covs[i] for i in np.flatnonzero(train)])
                te_mats, _ = tangent_from_covariances([covs[i] for i in np.flatnonzero(test)], ref)
                Xtr, Xte = vectorize_all(tr_mats), vectorize_all(te_mats)
            else:
                Xtr, Xte = fixed[m][train], fixed[m][test]
            model = svm_fit(spec, Xtr, labels[train])
            accs.append(float(np.mean(model.predict(Xte) == labels[test])))
        table[m] = {"mean": float(np.mean(accs)), "folds": accs}
    return {"folds": folds, "seed": seed, "measures": table}
