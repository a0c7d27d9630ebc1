import json
import numpy as np
import pytest

from cdx.cli import main
from cdx.errors import CdxError, SpecInvalid
from cdx.learners import load_model
from cdx.phenotypic import FeatureMatrix
from cdx.pipeline import STAGES, PipelineConfig, run_pipeline
from cdx.synthetic import SynthSpec, write_cohort

CONFIG = """\
track = "binary"

[paths]
subjects = "data/subjects"
phenotypic = "data/phenotypic.csv"
workdir = "work"

[seeds]
ica = 0
split = 0
mlp = 0
cv = 0
"""


@pytest.fixture(scope="module")
def cohort_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cohort")
    write_cohort(SynthSpec(n_subjects=30, shape=(12, 12, 10), t=80, seed=4), root / "data")
    (root / "pipeline.toml").write_text(CONFIG)
    return root


@pytest.fixture(scope="module")
def first_run(cohort_dir):
    cfg = PipelineConfig.load(cohort_dir / "pipeline.toml")
    events = []
    manifest = run_pipeline(cfg, events.append)
    return cfg, events, manifest


def snapshot(workdir):
    return {p.relative_to(workdir).as_posix(): p.read_bytes() for p in sorted(workdir.rglob("*")) if p.is_file()}


class TestRun:
    def test_all_stages(self, first_run):
        cfg, events, manifest = first_run
        assert [e["stage"] for e in events] == list(STAGES)
        assert all(e["status"] == "ran" for e in events)
        assert manifest["order"] == list(STAGES)
        assert manifest["seeds"] == {"ica": 0, "split": 0, "mlp": 0, "cv": 0}
        assert set(manifest["versions"]) == {"cdx", "numpy", "python"}
        report = manifest["metrics"]["report"]
        assert set(report) == {"fmri_mlp", "phenotypic_svm", "combined_ensemble"}
        for stage in STAGES:
            assert (cfg.workdir / "stages" / stage / "stage.json").exists()

    def test_outputs(self, first_run):
        cfg, _, _ = first_run
        st = cfg.workdir / "stages"
        fm = FeatureMatrix.load(st / "connectivity" / "fmri_features.json")
        assert fm.values.shape[1] == 210
        split = json.loads((st / "train" / "split.json").read_text())
        assert len(split["test"]) == round(0.3 * len(fm.ids))
        assert not set(split["train"]) & set(split["test"])
        assert load_model(st / "train" / "mlp.json").kind == "mlp"
        assert load_model(st / "train" / "svm.json").kind == "svm"
        rows = json.loads((st / "ensemble" / "predictions.json").read_text())
        assert [r["id"] for r in rows] == split["test"]
        for r in rows:
            assert r["ensemble"] == int(0.5 * r["fmri"] + 0.5 * r["pheno"] > 0.5)
        cmp = json.loads((st / "connectivity" / "compare_measures.json").read_text())
        assert set(cmp["measures"]) == {"correlation", "partial", "tangent"}

    def test_rerun_cached_and_identical(self, first_run):
        cfg, _, manifest = first_run
        before = snapshot(cfg.workdir)
        events = []
        again = run_pipeline(cfg, events.append)
        assert all(e["status"] == "cached" for e in events)
        assert again == manifest
        assert snapshot(cfg.workdir) == before

    def test_corruption_reruns_descendants(self, cohort_dir, tmp_path):
        cfg = PipelineConfig.load(cohort_dir / "pipeline.toml", workdir=tmp_path / "w")
        run_pipeline(cfg)
        before = snapshot(cfg.workdir)
        target = cfg.workdir / "stages" / "train" / "svm.json"
        target.write_text(target.read_text().replace('"svm"', '"svm" ', 1))
        events = []
        run_pipeline(cfg, events.append)
        status = {e["stage"]: e["status"] for e in events}
        assert status == {"ingest": "cached", "ica": "cached", "connectivity": "cached",
                          "train": "ran", "ensemble": "ran", "report": "ran"}
        assert snapshot(cfg.workdir) == before

    def test_param_change_invalidates(self, cohort_dir, tmp_path):
        text = CONFIG + "\n[ensemble]\nthreshold = 0.4\n"
        (tmp_path / "data").symlink_to(cohort_dir / "data")
        (tmp_path / "p.toml").write_text(text.replace('workdir = "work"', ""))
        base = PipelineConfig.load(cohort_dir / "pipeline.toml", workdir=tmp_path / "w")
        run_pipeline(base)
        changed = PipelineConfig.load(tmp_path / "p.toml", workdir=tmp_path / "w")
        events = []
        run_pipeline(changed, events.append)
        status = [e["status"] for e in events]
        assert status == ["cached"] * 4 + ["ran"] * 2

    def test_lock(self, first_run):
        cfg, _, _ = first_run
        lock = cfg.workdir / ".lock"
        lock.write_text("1")
        try:
            with pytest.raises(CdxError, match="locked"):
                run_pipeline(cfg)
        finally:
            lock.unlink()
        assert not lock.exists()

    def test_no_scans(self, cohort_dir, tmp_path):
        bad = PipelineConfig.from_dict(
            {"track": "binary", "paths": {"subjects": str(tmp_path), "phenotypic": str(cohort_dir / "data" / "phenotypic.csv")},
             "seeds": {"ica": 0, "split": 0, "mlp": 0, "cv": 0}}, workdir=tmp_path / "w2")
        with pytest.raises(CdxError):
            run_pipeline(bad)


class TestConfig:
    def base(self, tmp_path):
        return {"track": "binary", "paths": {"subjects": "s", "phenotypic": "p.csv"},
                "seeds": {"ica": 0, "split": 0, "mlp": 0, "cv": 0}}

    def test_missing_seed(self, tmp_path):
        obj = self.base(tmp_path)
        del obj["seeds"]["mlp"]
        with pytest.raises(SpecInvalid, match="mlp"):
            PipelineConfig.from_dict(obj, tmp_path, workdir=tmp_path)

    def test_missing_seeds_table(self, tmp_path):
        obj = self.base(tmp_path)
        del obj["seeds"]
        with pytest.raises(SpecInvalid):
            PipelineConfig.from_dict(obj, tmp_path, workdir=tmp_path)

    def test_non_binary_track(self, tmp_path):
        obj = self.base(tmp_path)
        obj["track"] = "multiclass"
        with pytest.raises(SpecInvalid):
            PipelineConfig.from_dict(obj, tmp_path, workdir=tmp_path)

    def test_workdir_from_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CDX_WORKDIR", str(tmp_path / "envwork"))
        cfg = PipelineConfig.from_dict(self.base(tmp_path), tmp_path)
        assert str(cfg.workdir) == str(tmp_path / "envwork")

    def test_no_workdir(self, tmp_path, monkeypatch):
        monkeypatch.delenv("CDX_WORKDIR", raising=False)
        with pytest.raises(SpecInvalid, match="workdir"):
            PipelineConfig.from_dict(self.base(tmp_path), tmp_path)

    def test_relative_workdir_follows_cwd(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        cfg = PipelineConfig.from_dict(self.base(tmp_path), tmp_path / "conf", workdir="out")
        assert cfg.workdir == tmp_path / "out"
        obj = self.base(tmp_path)
        obj["paths"]["workdir"] = "w"
        assert PipelineConfig.from_dict(obj, tmp_path / "conf").workdir == tmp_path / "conf" / "w"

    def test_paths_relative_to_config(self, tmp_path):
        cfg = PipelineConfig.from_dict(self.base(tmp_path), tmp_path, workdir=tmp_path / "w")
        assert str(cfg.subjects) == str(tmp_path / "s")


class TestCli:
    def test_synth_and_inspect(self, tmp_path, capsys):
        spec = tmp_path / "s.toml"
        spec.write_text("n_subjects = 3\nshape = [6, 6, 5]\nt = 20\nn_sources = 3\nseed = 1\n")
        assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "c"), "--json"]) == 0
        assert json.loads(capsys.readouterr().out)["subjects"] == 3
        nii = sorted((tmp_path / "c" / "subjects").iterdir())[0]
        assert main(["--json", "inspect", str(nii)]) == 0
        header = json.loads(capsys.readouterr().out)
        assert header["dim"][:5] == [4, 6, 6, 5, 20]

    def test_inspect_bad_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.nii"
        bad.write_bytes(b"\0" * 400)
        assert main(["inspect", str(bad)]) == 1

    def test_fmri_chain(self, cohort_dir, tmp_path, capsys):
        subjects = cohort_dir / "data" / "subjects"
        assert main(["ica", "--subjects", str(subjects), "--components", "6", "--seed", "0",
                     "--out", str(tmp_path / "ica.cdx")]) == 0
        ts_dir = tmp_path / "ts"
        ts_dir.mkdir()
        for nii in sorted(subjects.iterdir())[:6]:
            sid = nii.name.split(".")[0]
            assert main(["timeseries", "--model", str(tmp_path / "ica.cdx"), "--subject", str(nii),
                         "--out", str(ts_dir / f"{sid}.csv")]) == 0
        capsys.readouterr()
        assert main(["--json", "connectivity", "--measure", "partial", "--ts-dir", str(ts_dir),
                     "--ica-model", str(tmp_path / "ica.cdx"), "--out", str(tmp_path / "conn")]) == 0
        assert json.loads(capsys.readouterr().out) == {"subjects": 6, "features": 21}
        assert (tmp_path / "conn" / "edges.csv").exists()
        saved = json.loads((tmp_path / "conn" / "matrices.json").read_text())
        assert saved["k"] == 6 and len(saved["matrices"]) == 6
        assert main(["connectivity", "--ts-dir", str(ts_dir), "--threshold-mode", "absolute", "--strength", "0.2",
                     "--out", str(tmp_path / "conn_abs")]) == 0
        mean = np.mean([np.array(m) for m in json.loads(
            (tmp_path / "conn_abs" / "matrices.json").read_text())["matrices"].values()], axis=0)
        n_edges = len((tmp_path / "conn_abs" / "edges.csv").read_text().splitlines()) - 1
        assert n_edges == int(np.sum(np.abs(mean[np.triu_indices(6, 1)]) > 0.2))

    def test_pheno_train_predict_evaluate(self, cohort_dir, tmp_path, capsys):
        feats = tmp_path / "pheno.json"
        assert main(["ingest-pheno", "--csv", str(cohort_dir / "data" / "phenotypic.csv"),
                     "--track", "binary", "--out", str(feats)]) == 0
        spec = tmp_path / "knn.toml"
        spec.write_text("[grid]\nk = [1, 3]\n")
        capsys.readouterr()
        assert main(["--json", "train", "--model", "knn", "--features", str(feats), "--spec", str(spec),
                     "--grid", "--folds", "2", "--scale", "--out", str(tmp_path / "knn.json")]) == 0
        info = json.loads(capsys.readouterr().out)
        assert info["params"]["k"] in (1, 3) and len(info["grid"]["table"]) == 2
        assert main(["predict", "--model", str(tmp_path / "knn.json"), "--features", str(feats)]) == 0
        rows = json.loads(capsys.readouterr().out)
        assert len(rows) == len(FeatureMatrix.load(feats).ids)
        for fam in ("logreg", "adaboost"):
            assert main(["train", "--model", fam, "--features", str(feats), "--out", str(tmp_path / f"{fam}.json")]) == 0
        assert main(["evaluate", "--model", str(tmp_path / "logreg.json"), "--model", str(tmp_path / "adaboost.json"),
                     "--features", str(feats), "--dataset", "phenotypic", "--out", str(tmp_path / "rep")]) == 0
        lines = (tmp_path / "rep" / "comparison.csv").read_text().splitlines()
        assert [l.split(",")[1] for l in lines[1:]] == ["logreg", "adaboost"]

    def test_ensemble_command(self, first_run, tmp_path, capsys):
        cfg, _, manifest = first_run
        st = cfg.workdir / "stages"
        split = json.loads((st / "train" / "split.json").read_text())
        test = tmp_path / "test"
        test.mkdir()
        scalers = json.loads((st / "train" / "scalers.json").read_text())
        for name, src in (("fmri", st / "connectivity" / "fmri_features.json"),
                          ("pheno", st / "ingest" / "pheno_features.json")):
            fm = FeatureMatrix.load(src).subset(split["test"])
            fm.save(test / f"{name}_features.json")
        # the pipeline models expect scaled inputs; attach the scalers for the CLI
        for name, key in (("mlp", "fmri"), ("svm", "pheno")):
            m = load_model(st / "train" / f"{name}.json")
            m.metadata["scaler"] = scalers[key]
            m.save(tmp_path / f"{name}.json")
        capsys.readouterr()
        assert main(["--json", "ensemble", "--fmri-model", str(tmp_path / "mlp.json"), "--pheno-model",
                     str(tmp_path / "svm.json"), "--test", str(test), "--out", str(tmp_path / "ens")]) == 0
        acc = json.loads(capsys.readouterr().out)
        assert acc["ensemble"] == pytest.approx(manifest["metrics"]["report"]["combined_ensemble"])

    def test_run_command(self, cohort_dir, tmp_path, capsys):
        assert main(["run", "--config", str(cohort_dir / "pipeline.toml"), "--workdir", str(tmp_path / "w"),
                     "--json"]) == 0
        lines = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
        assert [l["stage"] for l in lines[:-1]] == list(STAGES)
        assert lines[-1]["event"] == "done"

    def test_run_missing_seeds(self, cohort_dir, tmp_path, capsys):
        cfg = tmp_path / "c.toml"
        cfg.write_text(CONFIG.split("[seeds]")[0])
        assert main(["run", "--config", str(cfg), "--workdir", str(tmp_path / "w")]) == 1
        assert "seeds" in capsys.readouterr().err
