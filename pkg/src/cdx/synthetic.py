"""Ground-truth cohort generator for desk-scale verification.

fMRI cohorts are built as ``baseline + sum_i map_i * course_i + noise`` on a
rounded box phantom, with Laplace spatial maps and label-dependent source
covariances.  Phenotypic tables follow the ADHD-200 column layout with
class-conditional shifts and an optional missingness plan.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import SpecInvalid
from .nifti_io import Volume4D, write_volume
from .serialization import dumps

MISSINGNESS_PLANS = ("none", "binary", "multiclass")

# target cohort survivor ratios (824 -> 400, 973 -> 505)
SURVIVOR_RATIO = {"binary": 400 / 824, "multiclass": 505 / 973}
# columns that exceed the 60% null rule under each plan
HEAVY_MISSING = {
    "binary": ("ADHD Index", "Secondary Dx", "Full2 IQ", "Med Status"),
    "multiclass": ("Secondary Dx", "Full2 IQ", "Med Status"),
}

PHENO_COLUMNS = (
    "ScanDir ID", "Site", "Gender", "Age", "Handedness", "DX", "Secondary Dx",
    "ADHD Measure", "ADHD Index", "Inattentive", "Hyper/Impulsive", "IQ Measure",
    "Verbal IQ", "Performance IQ", "Full2 IQ", "Full4 IQ", "Med Status",
    "QC_Athena", "QC_NIAK",
)


@dataclass(frozen=True)
class SynthSpec:
    n_subjects: int = 24
    shape: tuple = (16, 16, 12)
    t: int = 120
    n_sources: int = 20
    group_effect: float = 0.6
    noise: float = 1.0
    subject_jitter: float = 0.05
    baseline: float = 100.0
    missingness: str = "none"
    n_pheno_rows: int | None = None
    tr: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 1 or self.t < 2 or self.n_sources < 1:
            raise SpecInvalid("n_subjects, t and n_sources must be positive (t >= 2)")
        if len(self.shape) != 3 or min(self.shape) < 2:
            raise SpecInvalid(f"grid shape must be 3 extents >= 2, got {self.shape}")
        if not 0 <= self.group_effect <= 1:
            raise SpecInvalid("group_effect must lie in [0, 1]")
        if self.noise < 0 or self.subject_jitter < 0:
            raise SpecInvalid("noise and subject_jitter must be non-negative")
        if self.missingness not in MISSINGNESS_PLANS:
            raise SpecInvalid(f"unknown missingness plan {self.missingness!r}")
        if int(phantom_support(self.shape).sum()) < self.n_sources:
            raise SpecInvalid("phantom support smaller than the number of sources")

    @classmethod
    def from_dict(cls, obj):
        obj = dict(obj)
        if "shape" in obj:
            obj["shape"] = tuple(obj["shape"])
        return cls(**obj)


@dataclass(frozen=True, eq=False)
class FmriCohort:
    volumes: list
    support: np.ndarray
    maps: np.ndarray  # n_sources x n_support_voxels
    courses: list  # per subject, t x n_sources
    labels: np.ndarray
    dx: np.ndarray
    group_cov: dict  # label -> n_sources x n_sources
    subject_cov: list
    spec: SynthSpec = field(default_factory=SynthSpec)

    @property
    def ids(self):
        return [v.subject_id for v in self.volumes]

    def true_connectivity(self):
        """Per-subject correlation matrices implied by the generating covariances."""
        out = []
        for c in self.subject_cov:
            d = np.sqrt(np.diag(c))
            out.append(c / np.outer(d, d))
        return out

    def ground_truth(self):
        return {
            "spec": {**asdict(self.spec), "shape": list(self.spec.shape)},
            "ids": self.ids,
            "labels": self.labels.tolist(),
            "dx": self.dx.tolist(),
            "support": np.argwhere(self.support).tolist(),
            "maps": self.maps.tolist(),
            "group_cov": {str(k): v.tolist() for k, v in self.group_cov.items()},
            "true_connectivity": [m.tolist() for m in self.true_connectivity()],
        }


def phantom_support(shape, power=4):
    """Rounded-box brain phantom: ``sum |x_i / r_i|^power <= 1``."""
    grid = np.indices(shape).astype(float)
    r = sum(np.abs((grid[i] - (shape[i] - 1) / 2) / (shape[i] / 2 - 0.5)) ** power for i in range(3))
    return r <= 1


def _network_loadings(n_sources, strength):
    """Factor loadings: sources grouped into networks of ~5 sharing one factor."""
    n_net = max(1, n_sources // 5)
    B = np.zeros((n_sources, n_net))
    for i in range(n_sources):
        B[i, i % n_net] = strength
    return B


def group_covariances(n_sources, group_effect, strength=0.9):
    """Source covariance per label (0 = TDC, 1 = ADHD).

    ADHD keeps the network structure but loses part of it: half the networks
    are weakened by ``group_effect``, the sparser pattern seen in ADHD
    connectomes.
    """
    base = _network_loadings(n_sources, strength)
    adhd = base.copy()
    n_net = base.shape[1]
    weakened = np.arange(n_net) % 2 == 0 if n_net > 1 else np.array([True])
    adhd[:, weakened] *= 1.0 - group_effect
    covs = {}
    for label, B in ((0, base), (1, adhd)):
        covs[label] = B @ B.T + np.eye(n_sources)
    return covs


def _assign_labels(n, rng):
    labels = np.zeros(n, dtype=int)
    labels[: n // 2] = 1
    labels = rng.permutation(labels)
    dx = np.where(labels == 1, rng.integers(1, 4, size=n), 0)
    return labels, dx


def gen_fmri_cohort(spec):
    root = np.random.SeedSequence(spec.seed)
    maps_seq, label_seq, subj_seq = root.spawn(3)
    support = phantom_support(spec.shape)
    n_vox = int(support.sum())

    maps = np.random.default_rng(maps_seq).laplace(0.0, 1.0, size=(spec.n_sources, n_vox))
    labels, dx = _assign_labels(spec.n_subjects, np.random.default_rng(label_seq))
    gcov = group_covariances(spec.n_sources, spec.group_effect)

    volumes, courses, subject_cov = [], [], []
    for s, seq in enumerate(subj_seq.spawn(spec.n_subjects)):
        rng = np.random.default_rng(seq)
        cov = gcov[int(labels[s])]
        if spec.subject_jitter > 0:
            E = rng.normal(0.0, spec.subject_jitter, size=cov.shape)
            cov = cov + (E + E.T) / 2
            # keep the perturbed covariance positive definite
            w, v = np.linalg.eigh(cov)
            cov = (v * np.clip(w, 0.1, None)) @ v.T
        L = np.linalg.cholesky(cov)
        c = rng.standard_normal((spec.t, spec.n_sources)) @ L.T
        signal = c @ maps  # t x n_vox
        if spec.noise > 0:
            signal = signal + rng.normal(0.0, spec.noise, size=signal.shape)
        data = np.zeros(spec.shape + (spec.t,))
        data[support] = (spec.baseline + signal).T
        vol = Volume4D.from_array(np.float32(data).astype(np.float64), subject_id=f"sub-{s:04d}",
                                  tr=spec.tr)
        volumes.append(vol)
        courses.append(c)
        subject_cov.append(cov)

    return FmriCohort(volumes, support, maps, courses, labels, dx, gcov, subject_cov, spec)


def _clipped(rng, mean, sd, lo, hi, size):
    return np.clip(rng.normal(mean, sd, size=size), lo, hi)


# class-conditional means for DX 0..3 (TDC, ADHD-C, ADHD-H, ADHD-I)
_SCORE_MEANS = {
    "ADHD Index": (40.0, 68.0, 62.0, 63.0),
    "Inattentive": (32.0, 62.0, 45.0, 64.0),
    "Hyper/Impulsive": (30.0, 62.0, 64.0, 44.0),
}
_SCORE_RANGES = {"ADHD Index": (18, 99), "Inattentive": (9, 90), "Hyper/Impulsive": (9, 99)}


def gen_pheno_rows(spec, ids=None, dx=None):
    """Phenotypic rows as dicts of CSV strings (missing cells are empty or -999)."""
    root = np.random.SeedSequence([spec.seed, 1])
    value_seq, miss_seq, dx_seq = root.spawn(3)
    if ids is None:
        n = spec.n_pheno_rows or spec.n_subjects
        ids = [f"{1000000 + i:07d}" for i in range(n)]
    n = len(ids)
    if dx is None:
        _, dx = _assign_labels(n, np.random.default_rng(dx_seq))
    dx = np.asarray(dx, dtype=int)
    rng = np.random.default_rng(value_seq)
    adhd = dx > 0

    cols = {
        "ScanDir ID": list(ids),
        "Site": rng.integers(1, 9, size=n),
        "Gender": (rng.random(n) < np.where(adhd, 0.75, 0.5)).astype(int),
        "Age": np.round(_clipped(rng, 11.37, 2.8, 7.0, 18.0, n), 2),
        "Handedness": np.round(rng.uniform(-1.0, 1.0, size=n), 2),
        "DX": dx,
        "Secondary Dx": np.array(["" for _ in range(n)], dtype=object),
        "ADHD Measure": rng.integers(1, 4, size=n),
        "IQ Measure": rng.integers(1, 6, size=n),
        "Verbal IQ": np.round(_clipped(rng, np.where(adhd, 108.0, 116.0), 13.0, 65, 158, n)),
        "Performance IQ": np.round(_clipped(rng, np.where(adhd, 103.0, 108.0), 13.0, 54, 139, n)),
        "Full2 IQ": np.round(_clipped(rng, 110.0, 13.0, 70, 150, n)),
        "Full4 IQ": np.round(_clipped(rng, np.where(adhd, 106.0, 113.0), 12.0, 73, 153, n)),
        "Med Status": rng.integers(1, 3, size=n),
        "QC_Athena": (rng.random(n) < 0.9).astype(int),
        "QC_NIAK": (rng.random(n) < 0.85).astype(int),
    }
    for name, means in _SCORE_MEANS.items():
        lo, hi = _SCORE_RANGES[name]
        mu = np.asarray(means)[dx]
        cols[name] = np.round(_clipped(rng, mu, 5.0, lo, hi, n))

    rows = []
    for i in range(n):
        row = {}
        for c in PHENO_COLUMNS:
            v = cols[c][i]
            row[c] = v if isinstance(v, str) else (f"{v:g}" if isinstance(v, float) else str(v))
        rows.append(row)

    if spec.missingness != "none":
        _apply_missingness(rows, spec.missingness, np.random.default_rng(miss_seq))
    return rows


def _apply_missingness(rows, plan, rng):
    n = len(rows)
    heavy = HEAVY_MISSING[plan]
    for c in heavy:
        k = int(np.ceil(0.7 * n))
        for i in rng.choice(n, size=k, replace=False):
            rows[i][c] = "-999" if c != "Secondary Dx" else ""
    survivors = int(round(n * SURVIVOR_RATIO[plan]))
    light = [c for c in PHENO_COLUMNS if c not in heavy and c not in ("ScanDir ID", "DX", "Secondary Dx")]
    tokens = ("-999", "N/A", "", "pending")
    for i in rng.choice(n, size=n - survivors, replace=False):
        for c in rng.choice(light, size=rng.integers(1, 3), replace=False):
            rows[i][c] = tokens[rng.integers(len(tokens))]


def pheno_csv_text(rows):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(PHENO_COLUMNS), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def gen_pheno_table(spec, ids=None, dx=None):
    """CSV text with the ADHD-200 phenotypic header."""
    return pheno_csv_text(gen_pheno_rows(spec, ids, dx))


def write_cohort(spec, out_dir):
    """Write ``<id>.nii.gz`` volumes, ``phenotypic.csv`` and ``ground_truth.json``."""
    out = Path(out_dir)
    (out / "subjects").mkdir(parents=True, exist_ok=True)
    cohort = gen_fmri_cohort(spec)
    for vol in cohort.volumes:
        write_volume(vol, out / "subjects" / f"{vol.subject_id}.nii.gz")
    (out / "phenotypic.csv").write_text(gen_pheno_table(spec, cohort.ids, cohort.dx))
    (out / "ground_truth.json").write_text(dumps(cohort.ground_truth()))
    return cohort
