"""Kernel SVM trained by SMO with second-order working-set selection."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from ..errors import ConvergenceFailure
from ..serialization import encode_array
from .base import TrainedModel, arr, check_xy, register

TAU = 1e-12


@dataclass(frozen=True)
class SvmSpec:
    c: float = 100.0
    gamma: float = 0.04
    kernel: str = "rbf"
    tol: float = 1e-3
    max_passes: int = 200

    def __post_init__(self):
        if self.c <= 0 or self.gamma <= 0:
            raise ValueError("c and gamma must be positive")
        if self.kernel not in ("rbf", "linear"):
            raise ValueError(f"unsupported kernel {self.kernel!r}")


def kernel_matrix(A, B, kernel, gamma):
    if kernel == "linear":
        return A @ B.T
    sq = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.clip(sq, 0.0, None))


@dataclass
class BinarySolution:
    alpha: np.ndarray
    b: float
    n_iter: int
    gradient: np.ndarray = field(repr=False)

    def dual_objective(self, K, y):
        """``sum(alpha) - 1/2 alpha' Q alpha`` (to be maximised)."""
        ay = self.alpha * y
        return float(self.alpha.sum() - 0.5 * ay @ K @ ay)


def smo(K, y, c, tol=1e-3, max_iter=None):
    """Solve the binary soft-margin dual for labels ``y`` in {-1, +1}.

    ``K`` is the precomputed kernel matrix.  Decision function is
    ``sum_i alpha_i y_i K(x_i, x) + b``.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    Q = (y[:, None] * y[None, :]) * K
    QD = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    max_iter = max_iter if max_iter is not None else 200 * max(n, 100)
    pos = y > 0

    for it in range(max_iter):
        yG = -y * G
        up = np.where(pos, alpha < c, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < c)
        if not up.any() or not low.any():
            break
        up_idx = np.flatnonzero(up)
        i = up_idx[np.argmax(yG[up_idx])]
        gmax = yG[i]
        low_idx = np.flatnonzero(low)
        gmin = yG[low_idx].min()
        if gmax - gmin < tol:
            break
        cand = low_idx[yG[low_idx] < gmax]
        b_ = gmax - yG[cand]
        a_ = QD[i] + QD[cand] - 2.0 * y[i] * y[cand] * Q[i, cand]
        a_ = np.where(a_ > 0, a_, TAU)
        j = cand[np.argmin(-(b_ * b_) / a_)]

        ai_old, aj_old = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = QD[i] + QD[j] + 2.0 * Q[i, j]
            quad = quad if quad > 0 else TAU
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, diff
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0:
                if alpha[i] > c:
                    alpha[i], alpha[j] = c, c - diff
            elif alpha[j] > c:
                alpha[j], alpha[i] = c, c + diff
        else:
            quad = QD[i] + QD[j] - 2.0 * Q[i, j]
            quad = quad if quad > 0 else TAU
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > c:
                if alpha[i] > c:
                    alpha[i], alpha[j] = c, total - c
            elif alpha[j] < 0:
                alpha[j], alpha[i] = 0.0, total
            if total > c:
                if alpha[j] > c:
                    alpha[j], alpha[i] = c, total - c
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, total
        G += Q[:, i] * (alpha[i] - ai_old) + Q[:, j] * (alpha[j] - aj_old)
    else:
        raise ConvergenceFailure(f"SMO did not reach tol={tol} within {max_iter} iterations")

    yG = y * G
    free = (alpha > 0) & (alpha < c)
    if free.any():
        rho = yG[free].mean()
    else:
        # rho lies between the bounds set by the at-bound multipliers
        ub_mask = np.where(pos, alpha <= 0, alpha >= c)
        lb_mask = np.where(pos, alpha >= c, alpha <= 0)
        ub = yG[ub_mask].min() if ub_mask.any() else np.inf
        lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
        rho = (ub + lb) / 2 if np.isfinite(ub) and np.isfinite(lb) else (ub if np.isfinite(ub) else lb)
    return BinarySolution(alpha, float(-rho), it, G)


@register("svm")
class SvmModel(TrainedModel):
    def __init__(self, spec, X, classes, machines, metadata):
        # machines: list of (class_a, class_b, coef, b) over the stored X
        self.spec = spec
        self.X = X
        self.classes = classes
        self.machines = machines
        self.n_features = X.shape[1]
        self.metadata = metadata

    def decision_pairs(self, X):
        K = kernel_matrix(X, self.X, self.spec.kernel, self.spec.gamma)
        return np.column_stack([K @ coef + b for _, _, coef, b in self.machines])

    def decision_function(self, X):
        """Signed distance for binary models (positive -> ``classes[1]``)."""
        X = self._check(X)
        return -self.decision_pairs(X)[:, 0]

    def _predict_index(self, X):
        D = self.decision_pairs(X)
        votes = np.zeros((X.shape[0], self.class_count), dtype=int)
        for col, (a, b, _, _) in enumerate(self.machines):
            win_a = D[:, col] > 0
            votes[win_a, a] += 1
            votes[~win_a, b] += 1
        # argmax returns the first maximum: ties go to the lowest class index
        return np.argmax(votes, axis=1)

    def _state(self):
        return {
            "spec": self.spec.__dict__,
            "X": encode_array(self.X),
            "machines": [
                {"a": int(a), "b": int(b), "coef": encode_array(coef), "bias": float(bias)}
                for a, b, coef, bias in self.machines
            ],
        }

    @classmethod
    def _from_state(cls, state, classes, n_features, metadata):
        machines = [(m["a"], m["b"], arr(m["coef"]), m["bias"]) for m in state["machines"]]
        return cls(SvmSpec(**state["spec"]), arr(state["X"]), classes, machines, metadata)


def svm_fit(spec, X, y):
    """One-vs-one SMO; pair (a, b) treats class ``a`` as +1."""
    X, y, classes = check_xy(X, y)
    K_full = kernel_matrix(X, X, spec.kernel, spec.gamma)
    machines = []
    iters = []
    for a, b in combinations(range(len(classes)), 2):
        sel = np.flatnonzero((y == classes[a]) | (y == classes[b]))
        yy = np.where(y[sel] == classes[a], 1.0, -1.0)
        sol = smo(K_full[np.ix_(sel, sel)], yy, spec.c, spec.tol, spec.max_passes * max(len(sel), 100))
        coef = np.zeros(X.shape[0])
        coef[sel] = sol.alpha * yy
        machines.append((a, b, coef, sol.b))
        iters.append(sol.n_iter)
    # keep only rows that are a support vector of some pair
    keep = np.flatnonzero(np.any([coef != 0 for _, _, coef, _ in machines], axis=0))
    machines = [(a, b, coef[keep], bias) for a, b, coef, bias in machines]
    meta = {"multiclass": "one-vs-one", "iterations": iters, "n_support": int(keep.size), **spec.__dict__}
    return SvmModel(spec, X[keep], classes, machines, meta)
