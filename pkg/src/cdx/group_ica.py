"""Group-level spatial ICA over several subjects' 4D volumes.

The fit is a two-level PCA (subject, then group) followed by symmetric
FastICA with the logcosh contrast, yielding unit-norm spatial maps that act
as a masker for region time series.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConvergenceFailure, RankDeficient, ShapeMismatch
from .serialization import dumps, read_arrays, write_arrays


@dataclass(frozen=True, eq=False)
class IcaModel:
    n_components: int
    mask: np.ndarray
    components: np.ndarray
    pca_basis: np.ndarray
    whitening: np.ndarray
    unmixing: np.ndarray
    seed: int
    affine: np.ndarray = field(default_factory=lambda: np.eye(4))
    n_iter: int = 0
    subjects: tuple = ()
    params: dict = field(default_factory=dict)

    @property
    def n_voxels(self):
        return int(self.mask.sum())

    def component_maps(self):
        """Components as a (x, y, z, n_components) volume for export."""
        out = np.zeros(self.mask.shape + (self.n_components,))
        out[self.mask] = self.components.T
        return out

    def centroids(self):
        """World-space centroid of each map, weighted by its positive lobe."""
        ijk = np.argwhere(self.mask).astype(float)
        world = ijk @ self.affine[:3, :3].T + self.affine[:3, 3]
        w = np.clip(self.components, 0, None)
        w = w / np.where(w.sum(axis=1, keepdims=True) > 0, w.sum(axis=1, keepdims=True), 1.0)
        return w @ world

    def save(self, path):
        path = Path(path)
        write_arrays(path, {
            "mask": self.mask,
            "components": self.components,
            "pca_basis": self.pca_basis,
            "whitening": self.whitening,
            "unmixing": self.unmixing,
            "affine": self.affine,
        })
        sidecar = {
            "n_components": self.n_components,
            "seed": self.seed,
            "n_iter": self.n_iter,
            "subjects": list(self.subjects),
            "params": self.params,
        }
        Path(str(path) + ".json").write_text(dumps(sidecar))

    @classmethod
    def load(cls, path):
        arrays = read_arrays(path)
        meta = json.loads(Path(str(path) + ".json").read_text())
        return cls(
            n_components=meta["n_components"],
            mask=arrays["mask"],
            components=arrays["components"],
            pca_basis=arrays["pca_basis"],
            whitening=arrays["whitening"],
            unmixing=arrays["unmixing"],
            seed=meta["seed"],
            affine=arrays["affine"],
            n_iter=meta["n_iter"],
            subjects=tuple(meta["subjects"]),
            params=meta["params"],
        )


@dataclass(frozen=True, eq=False)
class RegionTimeSeries:
    subject_id: str
    series: np.ndarray
    tr_seconds: float = 2.0

    @property
    def n_timepoints(self):
        return self.series.shape[0]

    @property
    def n_regions(self):
        return self.series.shape[1]


def _spatial_shape(volumes):
    shapes = {v.shape[:3] for v in volumes}
    if len(shapes) != 1:
        raise ShapeMismatch(f"volumes disagree on spatial shape: {sorted(shapes)}")
    return shapes.pop()


def compute_mask(volumes, fraction=0.5):
    """Voxels whose temporal mean exceeds ``fraction`` x global mean in most subjects."""
    if not volumes:
        raise ValueError("need at least one volume")
    shape = _spatial_shape(volumes)
    votes = np.zeros(shape, dtype=int)
    for vol in volumes:
        mean_img = vol.data.mean(axis=3)
        votes += mean_img > fraction * mean_img.mean()
    return votes * 2 > len(volumes)


def _masked_matrix(volume, mask):
    if volume.shape[:3] != mask.shape:
        raise ShapeMismatch(f"volume spatial shape {volume.shape[:3]} != mask {mask.shape}")
    X = volume.data[mask].T  # time x voxels
    X = X - X.mean(axis=0)
    scale = np.sqrt(np.mean(X * X))
    return X / scale if scale > 0 else X


def _sym_decorrelate(W):
    s, u = np.linalg.eigh(W @ W.T)
    s = np.clip(s, np.finfo(float).tiny, None)
    return (u * (1.0 / np.sqrt(s))) @ u.T @ W


def fastica(Z, seed, max_iter=500, tol=1e-6, alpha=1.0):
    """Symmetric fixed-point ICA on whitened rows of ``Z`` (components x samples).

    Returns ``(W, n_iter)`` with ``W @ Z`` the estimated sources.
    """
    n, m = Z.shape
    rng = np.random.default_rng(seed)
    W = _sym_decorrelate(rng.standard_normal((n, n)))
    for it in range(1, max_iter + 1):
        Y = W @ Z
        G = np.tanh(alpha * Y)
        G_prime = alpha * (1.0 - G * G)
        W_new = _sym_decorrelate((G @ Z.T) / m - G_prime.mean(axis=1)[:, None] * W)
        lim = np.max(np.abs(np.abs(np.einsum("ij,ij->i", W_new, W)) - 1.0))
        W = W_new
        if lim < tol:
            return W, it
    raise ConvergenceFailure(f"FastICA did not converge in {max_iter} iterations (last change {lim:.2e})")


def fit(volumes, n_components=20, seed=0, mask=None, mask_fraction=0.5,
        subject_rank=None, max_iter=500, tol=1e-6):
    """Fit group ICA; ``subject_rank`` defaults to twice ``n_components``."""
    if len(volumes) < 2:
        raise ValueError("group ICA needs at least two subjects")
    if mask is None:
        mask = compute_mask(volumes, mask_fraction)
    elif mask.shape != _spatial_shape(volumes):
        raise ShapeMismatch("mask shape does not match volumes")
    n_vox = int(mask.sum())
    if n_vox <= n_components:
        raise RankDeficient(f"{n_vox} masked voxels cannot support {n_components} components")
    r = 2 * n_components if subject_rank is None else subject_rank

    reduced = []
    for vol in volumes:
        X = _masked_matrix(vol, mask)
        _, s, vt = np.linalg.svd(X, full_matrices=False)
        keep = min(r, int(np.sum(s > s[0] * 1e-10)) if s.size and s[0] > 0 else 0)
        if keep == 0:
            raise RankDeficient(f"subject {vol.subject_id!r} has no temporal variance in the mask")
        reduced.append(s[:keep, None] * vt[:keep])
    stacked = np.vstack(reduced)

    _, s, vt = np.linalg.svd(stacked, full_matrices=False)
    if s.size < n_components or s[n_components - 1] <= s[0] * 1e-10:
        raise RankDeficient(f"group data rank below {n_components}")
    basis = vt[:n_components]  # orthonormal spatial PCA maps

    centered = basis - basis.mean(axis=1, keepdims=True)
    cov = centered @ centered.T / n_vox
    evals, evecs = np.linalg.eigh(cov)
    if evals.min() <= evals.max() * 1e-12:
        raise RankDeficient("PCA maps are linearly dependent after centering")
    K = (evecs / np.sqrt(evals)) @ evecs.T
    W, n_iter = fastica(K @ centered, seed, max_iter=max_iter, tol=tol)

    maps = W @ K @ basis
    maps /= np.linalg.norm(maps, axis=1, keepdims=True)
    peak = np.argmax(np.abs(maps), axis=1)
    signs = np.sign(maps[np.arange(n_components), peak])
    maps *= signs[:, None]
    unmixing = (W * signs[:, None])

    # order by variance explained in the stacked subject data
    coef = stacked @ np.linalg.pinv(maps)
    order = np.argsort(-np.sum(coef * coef, axis=0), kind="stable")
    maps, unmixing = maps[order], unmixing[order]

    return IcaModel(
        n_components=n_components,
        mask=mask,
        components=maps,
        pca_basis=basis,
        whitening=K,
        unmixing=unmixing,
        seed=seed,
        affine=volumes[0].affine,
        n_iter=n_iter,
        subjects=tuple(v.subject_id for v in volumes),
        params={"subject_rank": r, "max_iter": max_iter, "tol": tol,
                "mask_fraction": mask_fraction, "contrast": "logcosh"},
    )


def project(model, volume):
    """Least-squares region coefficients (t x n) before standardisation."""
    X = _masked_matrix(volume, model.mask)
    return X @ np.linalg.pinv(model.components)


def transform(model, volume):
    coef = project(model, volume)
    coef = coef - coef.mean(axis=0)
    std = coef.std(axis=0)
    series = np.divide(coef, std, out=np.zeros_like(coef), where=std > 1e-12 * max(1.0, std.max()))
    return RegionTimeSeries(volume.subject_id, series, volume.tr_seconds)


def save_timeseries_csv(ts, path):
    header = ",".join(f"c{i}" for i in range(ts.n_regions))
    np.savetxt(path, ts.series, delimiter=",", header=header, comments="", fmt="%.17g")


def load_timeseries_csv(path, subject_id=None, tr_seconds=2.0):
    path = Path(path)
    series = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    sid = path.stem if subject_id is None else subject_id
    return RegionTimeSeries(sid, series, tr_seconds)
