"""``cdx`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import connectivity as conn
from . import group_ica
from ._toml import loads as toml_loads
from .ensemble import EnsembleConfig, emit_report, ensemble_predict, evaluate
from .errors import CdxError
from .learners import DEFAULT_SVM_GRID, FAMILIES, fit_family, grid_search, load_model
from .learners.model_selection import lattice
from .nifti_io import load_volume, parse_header, read_bytes
from .phenotypic import FeatureMatrix, MinMaxScaler, clean, load_schema, parse_csv, select_features
from .pipeline import PipelineConfig, run_pipeline
from .serialization import dumps
from .synthetic import SynthSpec, write_cohort


def _out(args, obj, text=None):
    if args.json or text is None:
        print(dumps(obj))
    else:
        print(text)


def _nifti_files(directory):
    return sorted(p for p in Path(directory).iterdir() if p.name.endswith((".nii", ".nii.gz")))


def _load_ts_dir(directory):
    paths = sorted(Path(directory).glob("*.csv"))
    if not paths:
        raise CdxError(f"no time-series CSVs in {directory}")
    return [group_ica.load_timeseries_csv(p, p.stem) for p in paths]


def cmd_inspect(args):
    header = parse_header(read_bytes(args.file))
    print(dumps(header.to_dict()))


def cmd_ingest_pheno(args):
    schema = load_schema(args.schema) if args.schema else None
    records = clean(parse_csv(args.csv, schema), args.null_threshold)
    fm = select_features(records, args.track)
    fm.save(args.out)
    _out(args, {"rows": len(fm.ids), "columns": list(fm.columns)},
         f"{len(fm.ids)} subjects x {len(fm.columns)} features -> {args.out}")


def cmd_ica(args):
    volumes = [load_volume(p) for p in _nifti_files(args.subjects)]
    if not volumes:
        raise CdxError(f"no NIfTI files in {args.subjects}")
    model = group_ica.fit(volumes, args.components, seed=args.seed)
    model.save(args.out)
    _out(args, {"components": model.n_components, "subjects": len(volumes), "n_iter": int(model.n_iter)},
         f"{model.n_components} components from {len(volumes)} subjects -> {args.out}")


def cmd_timeseries(args):
    model = group_ica.IcaModel.load(args.model)
    ts = group_ica.transform(model, load_volume(args.subject))
    group_ica.save_timeseries_csv(ts, args.out)
    _out(args, {"timepoints": ts.n_timepoints, "regions": ts.n_regions},
         f"{ts.n_timepoints} x {ts.n_regions} -> {args.out}")


def _labels_for(ids, path):
    if path is None:
        return np.zeros(len(ids), dtype=int)
    fm = FeatureMatrix.load(path)
    pos = {sid: lab for sid, lab in zip(fm.ids, fm.labels)}
    missing = [sid for sid in ids if sid not in pos]
    if missing:
        raise CdxError(f"no label for subjects {missing[:5]}")
    return np.array([pos[sid] for sid in ids], dtype=int)


def cmd_connectivity(args):
    ts = _load_ts_dir(args.ts_dir)
    mats, _ = conn.connectivity_matrices(ts, args.measure)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for t, m in zip(ts, mats):
        conn.write_matrix_csv(m, out / f"{t.subject_id}.csv")
    ids = [t.subject_id for t in ts]
    k = mats[0].k
    cols = tuple(f"e{i}_{j}" for i, j in zip(*np.triu_indices(k)))
    FeatureMatrix(cols, conn.vectorize_all(mats), _labels_for(ids, args.labels), tuple(ids)).save(
        out / "features.json")
    (out / "matrices.json").write_text(dumps({
        "measure": args.measure, "k": k, "matrices": {sid: m.values.tolist() for sid, m in zip(ids, mats)}}))
    mean = np.mean([m.values for m in mats], axis=0)
    centroids = group_ica.IcaModel.load(args.ica_model).centroids() if args.ica_model else None
    edges = conn.threshold_edges(mean, args.strength, args.threshold_mode)
    conn.write_edges_csv(edges, out / "edges.csv", centroids)
    _out(args, {"subjects": len(ids), "features": len(cols)}, f"{len(ids)} matrices -> {out}")


def cmd_compare_measures(args):
    ts = _load_ts_dir(args.ts_dir)
    labels = _labels_for([t.subject_id for t in ts], args.labels)
    result = conn.compare_measures(ts, labels, args.folds, args.seed)
    if args.out:
        Path(args.out).write_text(dumps(result))
    text = "\n".join(f"{m:12s} {v['mean']:.4f}" for m, v in result["measures"].items())
    _out(args, result, text)


def _read_spec(path):
    if path is None:
        return {}
    return toml_loads(Path(path).read_text())


def cmd_train(args):
    fm = FeatureMatrix.load(args.features)
    X = fm.values
    spec = _read_spec(args.spec)
    grid = spec.pop("grid", None)
    scaler = None
    if args.scale:
        scaler = MinMaxScaler.fit(X)
        X = scaler.transform(X)
    info = {}
    if args.grid:
        if grid is None:
            if args.model != "svm":
                raise CdxError("--grid needs a [grid] table in the --spec file for this model")
            grid = DEFAULT_SVM_GRID
        result = grid_search(args.model, [{**spec, **cell} for cell in lattice(grid)], X, fm.labels,
                             args.folds, args.seed)
        spec = result.best_params
        info["grid"] = {"best_params": result.best_params, "best_score": result.best_score,
                        "table": result.table}
    model = fit_family(args.model, spec, X, fm.labels)
    if scaler is not None:
        model.metadata["scaler"] = scaler.to_json()
    model.metadata["feature_columns"] = list(fm.columns)
    model.save(args.out)
    info.update({"model": args.model, "params": spec, "n_train": len(fm.ids), "out": str(args.out)})
    _out(args, info, f"{args.model} trained on {len(fm.ids)} rows -> {args.out}")


def _model_inputs(model, fm):
    X = fm.values
    if "scaler" in model.metadata:
        X = MinMaxScaler.from_json(model.metadata["scaler"]).transform(X)
    return X


def cmd_predict(args):
    model = load_model(args.model)
    fm = FeatureMatrix.load(args.features)
    pred = model.predict(_model_inputs(model, fm))
    rows = [{"id": sid, "prediction": int(p)} for sid, p in zip(fm.ids, pred)]
    if args.out:
        Path(args.out).write_text(dumps(rows))
    print(dumps(rows))


def cmd_ensemble(args):
    test = Path(args.test)
    fmri = FeatureMatrix.load(test / "fmri_features.json")
    pheno = FeatureMatrix.load(test / "pheno_features.json")
    ids = [sid for sid in pheno.ids if sid in set(fmri.ids)]
    fmri, pheno = fmri.subset(ids), pheno.subset(ids)
    m_f, m_p = load_model(args.fmri_model), load_model(args.pheno_model)
    p_f = m_f.predict(_model_inputs(m_f, fmri))
    p_p = m_p.predict(_model_inputs(m_p, pheno))
    cfg = EnsembleConfig(args.w_fmri, args.w_pheno, args.threshold)
    ens = ensemble_predict(cfg, p_f, p_p)
    y = pheno.labels
    reports = [
        evaluate(p_f, None, y, [0, 1], "mlp", "fmri"),
        evaluate(p_p, None, y, [0, 1], "svm", "phenotypic"),
        evaluate(ens, None, y, [0, 1], "ensemble", "combined",
                 {"w_fmri": cfg.w_fmri, "w_pheno": cfg.w_pheno, "threshold": cfg.threshold}),
    ]
    out = Path(args.out)
    emit_report(reports, out)
    rows = [{"id": s, "label": int(t), "fmri": int(a), "pheno": int(b), "ensemble": int(e)}
            for s, t, a, b, e in zip(ids, y, p_f, p_p, ens)]
    (out / "predictions.json").write_text(dumps(rows))
    _out(args, {r.name: r.accuracy for r in reports},
         "\n".join(f"{r.name:9s} {r.accuracy:.4f}" for r in reports))


def cmd_evaluate(args):
    reports = []
    for model_path in args.model:
        model = load_model(model_path)
        fm = FeatureMatrix.load(args.features)
        name = Path(model_path).name.split(".")[0]
        reports.append(evaluate(model, _model_inputs(model, fm), fm.labels, name=name, dataset=args.dataset))
    emit_report(reports, args.out)
    _out(args, {r.name: r.to_json() for r in reports},
         "\n".join(f"{r.name:12s} {r.accuracy:.4f}" for r in reports))


def cmd_synth(args):
    spec = SynthSpec.from_dict(_read_spec(args.spec))
    cohort = write_cohort(spec, args.out)
    _out(args, {"subjects": len(cohort.volumes), "out": str(args.out)},
         f"{len(cohort.volumes)} subjects -> {args.out}")


def cmd_run(args):
    cfg = PipelineConfig.load(args.config, workdir=args.workdir)

    def progress(event):
        if args.json:
            print(json.dumps(event, sort_keys=True), flush=True)
        else:
            print(f"[{event['status']:>6s}] {event['stage']}", file=sys.stderr, flush=True)

    manifest = run_pipeline(cfg, progress)
    if args.json:
        print(json.dumps({"event": "done", "metrics": manifest["metrics"]}, sort_keys=True))
    else:
        acc = manifest["metrics"]["report"]
        print("\n".join(f"{k:20s} {v:.4f}" for k, v in sorted(acc.items())))


def build_parser():
    p = argparse.ArgumentParser(prog="cdx", description="ADHD classification from fMRI and phenotypic data")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("inspect", help="print a NIfTI-1 header as JSON")
    s.add_argument("file")
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("ingest-pheno", help="clean a phenotypic CSV into a feature matrix")
    s.add_argument("--csv", required=True)
    s.add_argument("--track", choices=("multiclass", "binary"), default="multiclass")
    s.add_argument("--schema", help="JSON/TOML column alias map")
    s.add_argument("--null-threshold", type=float, default=0.60)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest_pheno)

    s = sub.add_parser("ica", help="fit group ICA over a directory of volumes")
    s.add_argument("--subjects", required=True)
    s.add_argument("--components", type=int, default=20)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ica)

    s = sub.add_parser("timeseries", help="extract region time series for one subject")
    s.add_argument("--model", required=True)
    s.add_argument("--subject", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_timeseries)

    s = sub.add_parser("connectivity", help="connectivity matrices from time-series CSVs")
    s.add_argument("--measure", choices=conn.MEASURES, default="correlation")
    s.add_argument("--ts-dir", required=True)
    s.add_argument("--labels", help="feature JSON providing labels by subject id")
    s.add_argument("--ica-model", help="IcaModel for edge centroids")
    s.add_argument("--strength", type=float, default=0.8, help="edge strength fraction")
    s.add_argument("--threshold-mode", choices=("quantile", "absolute"), default="quantile",
                   help="keep the top (1 - strength) share of |weight|, or |weight| > strength")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_connectivity)

    s = sub.add_parser("compare-measures", help="cross-validated accuracy per connectivity measure")
    s.add_argument("--ts-dir", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--folds", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_compare_measures)

    s = sub.add_parser("train", help="fit one classifier on a feature matrix")
    s.add_argument("--model", choices=FAMILIES, required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--spec", help="TOML of model parameters; optional [grid] table")
    s.add_argument("--grid", action="store_true", help="select parameters by stratified CV")
    s.add_argument("--folds", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scale", action="store_true", help="min-max scale features (stored with the model)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="predict labels with a saved model")
    s.add_argument("--model", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("ensemble", help="weighted vote of fMRI and phenotypic models")
    s.add_argument("--fmri-model", required=True)
    s.add_argument("--pheno-model", required=True)
    s.add_argument("--w-fmri", type=float, default=0.5)
    s.add_argument("--w-pheno", type=float, default=0.5)
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--test", required=True, help="dir with fmri_features.json and pheno_features.json")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ensemble)

    s = sub.add_parser("evaluate", help="metrics and confusion matrices for saved models")
    s.add_argument("--model", action="append", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--dataset", default="")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth", help="write a synthetic cohort")
    s.add_argument("--spec", help="TOML with SynthSpec fields")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("run", help="run the full pipeline from a config")
    s.add_argument("--config", required=True)
    s.add_argument("--workdir", default=None, help="overrides the config and CDX_WORKDIR")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # let --json appear after the subcommand as well
    want_json = "--json" in argv
    argv = [a for a in argv if a != "--json"]
    args = parser.parse_args(argv)
    args.json = want_json
    try:
        args.func(args)
    except (CdxError, OSError, ValueError) as exc:
        if want_json:
            print(json.dumps({"error": type(exc).__name__, "message": str(exc)}))
        else:
            print(f"cdx: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
