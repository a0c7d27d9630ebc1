"""Weighted-vote ensemble of binary predictions, metrics and report files."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch
from .serialization import dumps


@dataclass(frozen=True)
class EnsembleConfig:
    w_fmri: float = 0.5
    w_pheno: float = 0.5
    threshold: float = 0.5
    soft: bool = False

    def __post_init__(self):
        if self.w_fmri < 0 or self.w_pheno < 0 or self.w_fmri + self.w_pheno == 0:
            raise ValueError("weights must be non-negative and not both zero")
        total = self.w_fmri + self.w_pheno
        object.__setattr__(self, "w_fmri", self.w_fmri / total)
        object.__setattr__(self, "w_pheno", self.w_pheno / total)


def ensemble_score(cfg, pred_fmri, pred_pheno):
    return cfg.w_fmri * np.asarray(pred_fmri, float) + cfg.w_pheno * np.asarray(pred_pheno, float)


def ensemble_predict(cfg, pred_fmri, pred_pheno):
    """Class 1 iff the weighted sum exceeds the threshold (a tie goes to class 0).

    With ``cfg.soft`` the inputs may be class-1 probabilities instead of labels.
    """
    p_f = np.asarray(pred_fmri, float)
    p_p = np.asarray(pred_pheno, float)
    if p_f.shape != p_p.shape:
        raise ShapeMismatch("fMRI and phenotypic predictions differ in shape")
    if not cfg.soft and not (np.isin(p_f, (0, 1)).all() and np.isin(p_p, (0, 1)).all()):
        raise ValueError("hard voting expects 0/1 predictions")
    out = (ensemble_score(cfg, p_f, p_p) > cfg.threshold).astype(int)
    return int(out) if out.ndim == 0 else out


@dataclass
class EvalReport:
    name: str
    dataset: str
    labels: list
    confusion: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def n_test(self):
        return int(self.confusion.sum())

    @property
    def accuracy(self):
        return float(np.trace(self.confusion) / self.n_test) if self.n_test else 0.0

    @property
    def precision(self):
        col = self.confusion.sum(axis=0)
        return np.divide(np.diag(self.confusion), col, out=np.zeros(len(col)), where=col > 0)

    @property
    def recall(self):
        row = self.confusion.sum(axis=1)
        return np.divide(np.diag(self.confusion), row, out=np.zeros(len(row)), where=row > 0)

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return np.divide(2 * p * r, p + r, out=np.zeros(len(p)), where=(p + r) > 0)

    def to_json(self):
        return {
            "name": self.name,
            "dataset": self.dataset,
            "labels": [int(v) for v in self.labels],
            "n_test": self.n_test,
            "confusion": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "macro_precision": float(self.precision.mean()),
            "macro_recall": float(self.recall.mean()),
            "macro_f1": float(self.f1.mean()),
            "averaging": "macro",
            "metadata": self.metadata,
        }


def confusion_matrix(y_true, y_pred, labels):
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ShapeMismatch("y_true and y_pred differ in shape")
    pos = {int(v): i for i, v in enumerate(labels)}
    C = np.zeros((len(labels), len(labels)), dtype=int)
    for t, p in zip(y_true, y_pred):
        C[pos[int(t)], pos[int(p)]] += 1
    return C


def evaluate(model, X_test, y_test, labels=None, name="model", dataset="", metadata=None):
    """Score a fitted model (anything with ``predict``) or an array of predictions.

    Rows of the confusion matrix are true classes, columns predictions.
    """
    y_test = np.asarray(y_test)
    if hasattr(model, "predict"):
        X_test = np.asarray(X_test)
        if X_test.shape[0] != y_test.shape[0]:
            raise ShapeMismatch("X_test and y_test differ in length")
        y_pred = model.predict(X_test)
        meta = dict(getattr(model, "metadata", {}) or {})
        meta = {k: v for k, v in meta.items() if k not in ("loss_history", "sample_weights")}
        meta["kind"] = getattr(model, "kind", "model")
    else:
        y_pred = np.asarray(model)
        meta = {}
    if labels is None:
        labels = sorted(set(np.unique(y_test).tolist()) | set(np.unique(y_pred).tolist()))
    meta.update(metadata or {})
    return EvalReport(name, dataset, list(labels), confusion_matrix(y_test, y_pred, labels), meta)


def _csv_text(rows):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def emit_report(reports, out_dir):
    """Write ``metrics.json``, ``comparison.csv`` and ``confusion_<dataset>_<name>.csv``."""
    if not reports:
        raise ValueError("no reports to emit")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(dumps({"reports": [r.to_json() for r in reports]}))
    rows = [["dataset", "model", "accuracy", "macro_f1", "n_test"]]
    rows += [[r.dataset, r.name, f"{r.accuracy:.6f}", f"{float(r.f1.mean()):.6f}", r.n_test] for r in reports]
    (out / "comparison.csv").write_text(_csv_text(rows))
    written = [out / "metrics.json", out / "comparison.csv"]
    for r in reports:
        tag = f"{r.dataset}_{r.name}" if r.dataset else r.name
        path = out / f"confusion_{tag}.csv"
        body = [["true\\pred", *r.labels]] + [[lab, *row] for lab, row in zip(r.labels, r.confusion.tolist())]
        path.write_text(_csv_text(body))
        written.append(path)
    return written
