"""Config-driven end-to-end run with content-addressed stage caching.

Stages run in a fixed order (ingest, ica, connectivity, train, ensemble,
report).  Each stage writes into ``<workdir>/stages/<name>/`` together with
a ``stage.json`` record holding the stage key (SHA-256 of its parameters and
upstream artifact hashes) and the hash of every file it produced.  A stage is
skipped when its key matches and every recorded file still hashes the same.
"""

from __future__ import annotations

import json
import os
import platform
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import connectivity as conn
from . import group_ica
from ._toml import loads as toml_loads
from .ensemble import EnsembleConfig, emit_report, ensemble_predict, evaluate
from .errors import CdxError, SpecInvalid, StageError
from .learners import FMRI_LAYERS, MlpSpec, SvmSpec, load_model, mlp_fit, stratified_split, svm_fit
from .nifti_io import load_volume
from .phenotypic import FeatureMatrix, MinMaxScaler, clean, one_hot, parse_csv, select_features
from .serialization import dumps, sha256_bytes, sha256_file

STAGES = ("ingest", "ica", "connectivity", "train", "ensemble", "report")
SEED_KEYS = ("ica", "split", "mlp", "cv")


@dataclass(frozen=True)
class PipelineConfig:
    subjects: Path
    phenotypic: Path
    workdir: Path
    seeds: dict
    track: str = "binary"
    null_threshold: float = 0.60
    n_components: int = 20
    mask_fraction: float = 0.5
    measure: str = "correlation"
    compare_folds: int = 5
    test_fraction: float = 0.3
    mlp: dict = field(default_factory=dict)
    svm: dict = field(default_factory=lambda: {"c": 1000.0, "gamma": 0.05})
    w_fmri: float = 0.5
    w_pheno: float = 0.5
    threshold: float = 0.5

    def __post_init__(self):
        missing = [k for k in SEED_KEYS if k not in self.seeds]
        if missing:
            raise SpecInvalid(f"config must set seeds {missing} (no implicit defaults)")
        if any(not isinstance(self.seeds[k], int) for k in SEED_KEYS):
            raise SpecInvalid("seeds must be integers")
        if self.track != "binary":
            raise SpecInvalid("the fMRI + phenotypic ensemble runs on the binary track")
        if self.measure not in conn.MEASURES:
            raise SpecInvalid(f"unknown measure {self.measure!r}")

    @classmethod
    def from_dict(cls, obj, base_dir=".", workdir=None):
        base = Path(base_dir)
        paths = dict(obj.get("paths", {}))
        # an explicit or environment workdir is relative to the cwd, a config one to the config
        if workdir is None and "workdir" in paths:
            workdir = base / paths["workdir"]
        workdir = workdir or os.environ.get("CDX_WORKDIR")
        if workdir is None:
            raise SpecInvalid("no workdir: set [paths].workdir or CDX_WORKDIR")
        workdir = Path(workdir).absolute()
        for key in ("subjects", "phenotypic"):
            if key not in paths:
                raise SpecInvalid(f"[paths].{key} is required")
        if "seeds" not in obj:
            raise SpecInvalid("config needs a [seeds] table")
        ica = obj.get("ica", {})
        cn = obj.get("connectivity", {})
        split = obj.get("split", {})
        ens = obj.get("ensemble", {})
        return cls(
            subjects=base / paths["subjects"],
            phenotypic=base / paths["phenotypic"],
            workdir=workdir,
            seeds=dict(obj["seeds"]),
            track=obj.get("track", "binary"),
            null_threshold=float(obj.get("ingest", {}).get("null_threshold", 0.60)),
            n_components=int(ica.get("n_components", 20)),
            mask_fraction=float(ica.get("mask_fraction", 0.5)),
            measure=cn.get("measure", "correlation"),
            compare_folds=int(cn.get("compare_folds", 5)),
            test_fraction=float(split.get("test_fraction", 0.3)),
            mlp=dict(obj.get("mlp", {})),
            svm=dict(obj.get("svm", {"c": 1000.0, "gamma": 0.05})),
            w_fmri=float(ens.get("w_fmri", 0.5)),
            w_pheno=float(ens.get("w_pheno", 0.5)),
            threshold=float(ens.get("threshold", 0.5)),
        )

    @classmethod
    def load(cls, path, workdir=None):
        path = Path(path)
        return cls.from_dict(toml_loads(path.read_text()), path.parent, workdir)

    def stage_params(self, stage):
        """Parameters that feed a stage's cache key."""
        return {
            "ingest": {"track": self.track, "null_threshold": self.null_threshold},
            "ica": {"n_components": self.n_components, "mask_fraction": self.mask_fraction,
                    "seed": self.seeds["ica"]},
            "connectivity": {"measure": self.measure, "compare_folds": self.compare_folds,
                             "seed": self.seeds["cv"]},
            "train": {"test_fraction": self.test_fraction, "split_seed": self.seeds["split"],
                      "mlp_seed": self.seeds["mlp"], "mlp": self.mlp, "svm": self.svm},
            "ensemble": {"w_fmri": self.w_fmri, "w_pheno": self.w_pheno, "threshold": self.threshold},
            "report": {},
        }[stage]


def _subject_files(directory):
    files = sorted(p for p in Path(directory).iterdir() if p.name.endswith((".nii", ".nii.gz")))
    if not files:
        raise CdxError(f"no NIfTI files in {directory}")
    return files


def _stem(path):
    name = Path(path).name
    return name[: -len(".nii.gz")] if name.endswith(".nii.gz") else name[: -len(".nii")]


# ---- stages ---------------------------------------------------------------
# Each takes (cfg, dirs, out) where dirs maps earlier stage names to their
# output directories, and returns a JSON-able metrics dict.

def _stage_ingest(cfg, dirs, out):
    records = clean(parse_csv(cfg.phenotypic), cfg.null_threshold)
    fm = select_features(records, cfg.track)
    available = {_stem(p) for p in _subject_files(cfg.subjects)}
    keep = [sid for sid in fm.ids if sid in available]
    if len(keep) < 4:
        raise CdxError(f"only {len(keep)} subjects have both a scan and clean phenotypics")
    fm.subset(keep).save(out / "pheno_features.json")
    return {"records_clean": len(records), "subjects": len(keep)}


def _stage_ica(cfg, dirs, out):
    ids = FeatureMatrix.load(dirs["ingest"] / "pheno_features.json").ids
    by_id = {_stem(p): p for p in _subject_files(cfg.subjects)}
    volumes = [load_volume(by_id[sid], sid) for sid in ids]
    model = group_ica.fit(volumes, cfg.n_components, seed=cfg.seeds["ica"],
                          mask_fraction=cfg.mask_fraction)
    model.save(out / "ica.cdx")
    ts_dir = out / "timeseries"
    ts_dir.mkdir()
    for vol in volumes:
        group_ica.save_timeseries_csv(group_ica.transform(model, vol), ts_dir / f"{vol.subject_id}.csv")
    return {"n_iter": int(model.n_iter), "voxels": int(model.mask.sum())}


def _stage_connectivity(cfg, dirs, out):
    pheno = FeatureMatrix.load(dirs["ingest"] / "pheno_features.json")
    ts = [group_ica.load_timeseries_csv(dirs["ica"] / "timeseries" / f"{sid}.csv", sid) for sid in pheno.ids]
    comparison = conn.compare_measures(ts, pheno.labels, cfg.compare_folds, cfg.seeds["cv"])
    (out / "compare_measures.json").write_text(dumps(comparison))
    # the tangent reference is fitted on all subjects here; held-out scoring
    # of tangent features happens inside compare_measures
    mats, _ = conn.connectivity_matrices(ts, cfg.measure)
    X = conn.vectorize_all(mats)
    k = mats[0].k
    cols = tuple(f"e{i}_{j}" for i, j in zip(*np.triu_indices(k)))
    FeatureMatrix(cols, X, pheno.labels, pheno.ids).save(out / "fmri_features.json")
    mean = np.mean([m.values for m in mats], axis=0)
    conn.write_matrix_csv(mean, out / "mean_matrix.csv")
    centroids = group_ica.IcaModel.load(dirs["ica"] / "ica.cdx").centroids()
    conn.write_edges_csv(conn.threshold_edges(mean, 0.8), out / "edges.csv", centroids)
    return {m: v["mean"] for m, v in comparison["measures"].items()}


def _stage_train(cfg, dirs, out):
    pheno = FeatureMatrix.load(dirs["ingest"] / "pheno_features.json")
    fmri = FeatureMatrix.load(dirs["connectivity"] / "fmri_features.json")
    # one split over zipped (fMRI, phenotypic, label) rows keeps modalities aligned
    train_ids, test_ids = stratified_split(pheno.ids, pheno.labels, cfg.test_fraction, cfg.seeds["split"])
    split = {"train": list(train_ids), "test": list(test_ids)}
    (out / "split.json").write_text(dumps(split))

    f_tr, p_tr = fmri.subset(train_ids), pheno.subset(train_ids)
    f_scaler, p_scaler = MinMaxScaler.fit(f_tr.values), MinMaxScaler.fit(p_tr.values)
    scalers = {"fmri": f_scaler.to_json(), "pheno": p_scaler.to_json()}
    (out / "scalers.json").write_text(dumps(scalers))

    mlp_params = {"layer_sizes": FMRI_LAYERS, **cfg.mlp, "seed": cfg.seeds["mlp"]}
    mlp_params["layer_sizes"] = tuple(mlp_params["layer_sizes"])
    if mlp_params["layer_sizes"][0] != fmri.values.shape[1]:
        raise SpecInvalid(f"MLP input width {mlp_params['layer_sizes'][0]} != {fmri.values.shape[1]} features")
    mlp = mlp_fit(MlpSpec(**mlp_params), f_scaler.transform(f_tr.values), one_hot(f_tr.labels, 2))
    mlp.save(out / "mlp.json")
    svm = svm_fit(SvmSpec(**cfg.svm), p_scaler.transform(p_tr.values), p_tr.labels)
    svm.save(out / "svm.json")
    return {"n_train": len(train_ids), "n_test": len(test_ids), "mlp_final_loss": mlp.metadata["final_loss"]}


def _test_predictions(dirs):
    split = json.loads((dirs["train"] / "split.json").read_text())
    scalers = json.loads((dirs["train"] / "scalers.json").read_text())
    fmri = FeatureMatrix.load(dirs["connectivity"] / "fmri_features.json").subset(split["test"])
    pheno = FeatureMatrix.load(dirs["ingest"] / "pheno_features.json").subset(split["test"])
    mlp = load_model(dirs["train"] / "mlp.json")
    svm = load_model(dirs["train"] / "svm.json")
    Xf = MinMaxScaler.from_json(scalers["fmri"]).transform(fmri.values)
    Xp = MinMaxScaler.from_json(scalers["pheno"]).transform(pheno.values)
    return split["test"], pheno.labels, (mlp, Xf), (svm, Xp)


def _stage_ensemble(cfg, dirs, out):
    ids, y, (mlp, Xf), (svm, Xp) = _test_predictions(dirs)
    p_f, p_p = mlp.predict(Xf), svm.predict(Xp)
    ens = ensemble_predict(EnsembleConfig(cfg.w_fmri, cfg.w_pheno, cfg.threshold), p_f, p_p)
    rows = [{"id": sid, "label": int(t), "fmri": int(a), "pheno": int(b), "ensemble": int(e)}
            for sid, t, a, b, e in zip(ids, y, p_f, p_p, ens)]
    (out / "predictions.json").write_text(dumps(rows))
    return {"accuracy": float(np.mean(ens == y))}


def _stage_report(cfg, dirs, out):
    rows = json.loads((dirs["ensemble"] / "predictions.json").read_text())
    y = [r["label"] for r in rows]
    reports = [
        evaluate([r["fmri"] for r in rows], None, y, [0, 1], "mlp", "fmri"),
        evaluate([r["pheno"] for r in rows], None, y, [0, 1], "svm", "phenotypic"),
        evaluate([r["ensemble"] for r in rows], None, y, [0, 1], "ensemble", "combined",
                 {"w_fmri": cfg.w_fmri, "w_pheno": cfg.w_pheno, "threshold": cfg.threshold}),
    ]
    emit_report(reports, out)
    return {f"{r.dataset}_{r.name}": r.accuracy for r in reports}


_RUNNERS = {
    "ingest": _stage_ingest,
    "ica": _stage_ica,
    "connectivity": _stage_connectivity,
    "train": _stage_train,
    "ensemble": _stage_ensemble,
    "report": _stage_report,
}


# ---- orchestration --------------------------------------------------------

def _hash_tree(directory):
    """``{relative path: sha256}`` for every file below ``directory`` except stage.json."""
    directory = Path(directory)
    return {
        p.relative_to(directory).as_posix(): sha256_file(p)
        for p in sorted(directory.rglob("*"))
        if p.is_file() and p.name != "stage.json"
    }


def _input_hashes(cfg, stage):
    if stage == "ingest":
        return {"phenotypic": sha256_file(cfg.phenotypic),
                "subjects": sorted(p.name for p in _subject_files(cfg.subjects))}
    if stage == "ica":
        return {p.name: sha256_file(p) for p in _subject_files(cfg.subjects)}
    return {}


def _cached(stage_dir, key):
    record = stage_dir / "stage.json"
    if not record.exists():
        return None
    try:
        info = json.loads(record.read_text())
    except ValueError:
        return None
    if info.get("key") != key or _hash_tree(stage_dir) != info.get("outputs"):
        return None
    return info


class _Lock:
    def __init__(self, workdir):
        self.path = Path(workdir) / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise CdxError(f"workdir is locked by another run ({self.path})") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def run_pipeline(cfg, progress=None):
    """Run (or resume) all stages; returns the manifest dict.

    ``progress`` receives one event dict per stage.  A stage that reruns
    forces every later stage to rerun as well.
    """
    for p in (cfg.subjects, cfg.phenotypic):
        if not Path(p).exists():
            raise CdxError(f"path does not exist: {p}")
    workdir = Path(cfg.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    emit = progress or (lambda event: None)

    with _Lock(workdir):
        dirs, stages, metrics = {}, {}, {}
        upstream, dirty = [], False
        for stage in STAGES:
            stage_dir = workdir / "stages" / stage
            key = sha256_bytes(dumps({
                "stage": stage,
                "version": __version__,
                "params": cfg.stage_params(stage),
                "inputs": _input_hashes(cfg, stage),
                "upstream": upstream,
            }).encode())
            info = None if dirty else _cached(stage_dir, key)
            status = "cached"
            if info is None:
                dirty = True
                status = "ran"
                if stage_dir.exists():
                    shutil.rmtree(stage_dir)
                stage_dir.mkdir(parents=True)
                try:
                    result = _RUNNERS[stage](cfg, dirs, stage_dir)
                except Exception as exc:
                    emit({"stage": stage, "status": "failed", "error": str(exc)})
                    raise StageError(stage, exc) from exc
                info = {"stage": stage, "key": key, "outputs": _hash_tree(stage_dir), "metrics": result}
                (stage_dir / "stage.json").write_text(dumps(info))
            dirs[stage] = stage_dir
            stages[stage] = {"key": key, "outputs": info["outputs"]}
            metrics[stage] = info["metrics"]
            upstream.append(sha256_bytes(dumps(info["outputs"]).encode()))
            emit({"stage": stage, "status": status, "key": key})

        manifest = {
            "stages": stages,
            "order": list(STAGES),
            "seeds": dict(cfg.seeds),
            "versions": {"cdx": __version__, "numpy": np.__version__,
                         "python": platform.python_version()},
            "metrics": metrics,
        }
        (workdir / "manifest.json").write_text(dumps(manifest))
    return manifest
