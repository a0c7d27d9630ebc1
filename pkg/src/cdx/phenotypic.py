"""Phenotypic CSV ingestion, cleaning and feature-matrix construction."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import EmptyResult, LabelOutOfRange, MissingColumn

# canonical field -> accepted CSV header spellings
DEFAULT_SCHEMA = {
    "scan_dir_id": ["ScanDir ID", "ScanDirID", "ScanIDDir", "Subject ID"],
    "site": ["Site"],
    "gender": ["Gender", "sex"],
    "age": ["Age", "age"],
    "handedness": ["Handedness"],
    "dx": ["DX"],
    "secondary_dx": ["Secondary Dx", "Secondary DX"],
    "adhd_measure": ["ADHD Measure"],
    "adhd_index": ["ADHD Index"],
    "inattentive": ["Inattentive"],
    "hyper_impulsive": ["Hyper/Impulsive"],
    "iq_measure": ["IQ Measure"],
    "verbal_iq": ["Verbal IQ"],
    "performance_iq": ["Performance IQ"],
    "full2_iq": ["Full2 IQ"],
    "full4_iq": ["Full4 IQ"],
    "med_status": ["Med Status"],
    "qc_athena": ["QC_Athena"],
    "qc_niak": ["QC_NIAK"],
}
REQUIRED = ("scan_dir_id", "dx")
# secondary_dx is free text in ADHD-200; everything else is numeric
TEXT_FIELDS = ("scan_dir_id", "secondary_dx")
MISSING_TOKENS = {"", "-999", "-999.0", "n/a", "na", "nan", "pending", "none"}

DX_NAMES = ("TDC", "ADHD-C", "ADHD-H", "ADHD-I")

MULTICLASS_FEATURES = (
    "site", "gender", "age", "adhd_measure", "adhd_index", "inattentive",
    "hyper_impulsive", "iq_measure", "verbal_iq", "performance_iq", "full4_iq",
    "qc_athena", "qc_niak",
)
BINARY_FEATURES = tuple(f for f in MULTICLASS_FEATURES if f != "adhd_index")


@dataclass(frozen=True)
class SubjectRecord:
    """One cleaned phenotypic row; fields dropped during cleaning are None."""

    scan_dir_id: str
    dx: int
    site: float | None = None
    gender: float | None = None
    age: float | None = None
    handedness: float | None = None
    secondary_dx: str | None = None
    adhd_measure: float | None = None
    adhd_index: float | None = None
    inattentive: float | None = None
    hyper_impulsive: float | None = None
    iq_measure: float | None = None
    verbal_iq: float | None = None
    performance_iq: float | None = None
    full2_iq: float | None = None
    full4_iq: float | None = None
    med_status: float | None = None
    qc_athena: float | None = None
    qc_niak: float | None = None

    @property
    def adhd_binary(self):
        return int(self.dx > 0)


RECORD_FIELDS = tuple(f.name for f in fields(SubjectRecord))


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    columns: tuple
    values: np.ndarray
    labels: np.ndarray
    ids: tuple

    def __post_init__(self):
        if self.values.shape != (len(self.ids), len(self.columns)):
            raise ValueError("values shape does not match ids x columns")
        if len(self.labels) != len(self.ids):
            raise ValueError("labels length does not match rows")
        if np.isnan(self.values).any():
            raise ValueError("feature matrix contains NaN")

    def subset(self, ids):
        pos = {sid: i for i, sid in enumerate(self.ids)}
        idx = [pos[s] for s in ids]
        return FeatureMatrix(self.columns, self.values[idx], self.labels[idx], tuple(ids))

    def to_json(self):
        return {
            "columns": list(self.columns),
            "ids": list(self.ids),
            "labels": [int(v) for v in self.labels],
            "rows": self.values.tolist(),
        }

    @classmethod
    def from_json(cls, obj):
        values = np.asarray(obj["rows"], dtype=float).reshape(len(obj["ids"]), len(obj["columns"]))
        return cls(tuple(obj["columns"]), values, np.asarray(obj["labels"], dtype=int), tuple(obj["ids"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True))

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text()))


def load_schema(path):
    """Read a column alias map (canonical field -> header name or list) from JSON or TOML."""
    path = Path(path)
    if path.suffix == ".toml":
        from ._toml import loads

        obj = loads(path.read_text())
        obj = obj.get("columns", obj)
    else:
        obj = json.loads(path.read_text())
    schema = {k: list(v) for k, v in DEFAULT_SCHEMA.items()}
    for key, val in obj.items():
        schema[key] = [val] if isinstance(val, str) else list(val)
    return schema


def _is_missing(token):
    return token is None or token.strip().lower() in MISSING_TOKENS


def _convert(name, token):
    if _is_missing(token):
        return None
    token = token.strip()
    if name in TEXT_FIELDS:
        return token
    try:
        value = float(token)
    except ValueError:
        return None
    if value == -999 or not np.isfinite(value):
        return None
    if name == "age" and value < 0:
        return None
    return value


def parse_csv(path, schema=None, required=REQUIRED):
    """Parse a phenotypic CSV into raw records (dicts keyed by canonical field).

    Missing markers become ``None``; columns not named in the schema are kept
    verbatim under their original header.
    """
    schema = DEFAULT_SCHEMA if schema is None else schema
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            return []
        rows = [r for r in reader if any(cell.strip() for cell in r)]

    col_of = {}
    for canon, aliases in schema.items():
        for alias in aliases:
            if alias in header:
                col_of[canon] = header.index(alias)
                break
    for name in required:
        if name not in col_of:
            raise MissingColumn(f"required column {name!r} ({schema.get(name)}) not in CSV header")
    known = set(col_of.values())

    records = []
    for row in rows:
        row = row + [""] * (len(header) - len(row))
        rec = {canon: _convert(canon, row[i]) for canon, i in col_of.items()}
        for i, h in enumerate(header):
            if i not in known:
                rec[h] = row[i]
        records.append(rec)
    return records


def _as_dict(rec):
    return asdict(rec) if isinstance(rec, SubjectRecord) else rec


def null_fractions(records):
    records = [_as_dict(r) for r in records]
    present = [f for f in RECORD_FIELDS if any(f in r for r in records)]
    n = len(records)
    return {f: sum(r.get(f) is None for r in records) / n for f in present}


def clean(records, column_null_threshold=0.60):
    """Drop columns with missing fraction above the threshold, then incomplete rows.

    Rows whose DX is missing are always discarded.
    """
    if not 0 < column_null_threshold <= 1:
        raise ValueError("column_null_threshold must lie in (0, 1]")
    records = [_as_dict(r) for r in records]
    if not records:
        raise EmptyResult("no records to clean")
    fractions = null_fractions(records)
    keep = [f for f, frac in fractions.items() if frac <= column_null_threshold or f in REQUIRED]
    out = []
    for r in records:
        if any(r.get(f) is None for f in keep):
            continue
        values = {f: r[f] for f in keep}
        values["dx"] = int(values["dx"])
        out.append(SubjectRecord(**values))
    if not out:
        raise EmptyResult("cleaning eliminated every row")
    return out


def select_features(records, track):
    """Build the predictor matrix for the ``multiclass`` (DX) or ``binary`` track."""
    if track == "multiclass":
        cols = MULTICLASS_FEATURES
        labels = np.array([r.dx for r in records], dtype=int)
    elif track == "binary":
        cols = BINARY_FEATURES
        labels = np.array([r.adhd_binary for r in records], dtype=int)
    else:
        raise ValueError(f"unknown track {track!r}")
    for c in cols:
        if any(getattr(r, c) is None for r in records):
            raise MissingColumn(f"feature {c!r} unavailable (dropped or never present)")
    values = np.array([[float(getattr(r, c)) for c in cols] for r in records], dtype=float)
    values = values.reshape(len(records), len(cols))
    return FeatureMatrix(cols, values, labels, tuple(r.scan_dir_id for r in records))


@dataclass(frozen=True, eq=False)
class MinMaxScaler:
    mins: np.ndarray
    maxs: np.ndarray

    @property
    def constant(self):
        return self.maxs == self.mins

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError("need a 2D matrix with at least one row")
        return cls(X.min(axis=0), X.max(axis=0))

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        span = np.where(self.constant, 1.0, self.maxs - self.mins)
        out = (X - self.mins) / span
        out[:, self.constant] = 0.0
        return out

    def inverse_transform(self, Z):
        return np.asarray(Z, dtype=float) * (self.maxs - self.mins) + self.mins

    def to_json(self):
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist()}

    @classmethod
    def from_json(cls, obj):
        return cls(np.asarray(obj["mins"], dtype=float), np.asarray(obj["maxs"], dtype=float))


def min_max_scale(X):
    """Scale each column into [0, 1]; returns ``(scaled, scaler)``."""
    scaler = MinMaxScaler.fit(X)
    return scaler.transform(X), scaler


def one_hot(labels, n_classes):
    labels = np.asarray(labels, dtype=int)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelOutOfRange(f"labels must lie in 0..{n_classes - 1}")
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def decode_one_hot(Y):
    return np.argmax(np.asarray(Y), axis=1)
