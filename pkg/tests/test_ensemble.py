import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdx.ensemble import EnsembleConfig, EvalReport, emit_report, ensemble_predict, evaluate
from cdx.errors import ShapeMismatch
from cdx.learners import knn_fit


class TestVote:
    @pytest.mark.parametrize("f, p, out", [(1, 1, 1), (1, 0, 0), (0, 1, 0), (0, 0, 0)])
    def test_truth_table(self, f, p, out):
        assert ensemble_predict(EnsembleConfig(), f, p) == out

    def test_weights_normalized(self):
        cfg = EnsembleConfig(w_fmri=3, w_pheno=1)
        assert (cfg.w_fmri, cfg.w_pheno) == (0.75, 0.25)
        assert ensemble_predict(cfg, 1, 0) == 1

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            EnsembleConfig(w_fmri=0, w_pheno=0)
        with pytest.raises(ValueError):
            EnsembleConfig(w_fmri=-1, w_pheno=1)
        with pytest.raises(ShapeMismatch):
            ensemble_predict(EnsembleConfig(), [0, 1], [1])
        with pytest.raises(ValueError):
            ensemble_predict(EnsembleConfig(), [0.7], [1])

    def test_soft_mode(self):
        cfg = EnsembleConfig(soft=True)
        np.testing.assert_array_equal(ensemble_predict(cfg, [0.7, 0.4], [0.6, 0.6]), [1, 0])

    def test_exactness_constructed(self):
        r = np.random.default_rng(0)
        y = np.array([0] * 20 + [1] * 20)
        pheno = y.copy()
        fmri = y.copy()
        fmri[r.choice(20, 8, replace=False)] = 1  # false positives only
        assert np.all(fmri[y == 1] == 1) and np.mean(fmri == y) == 0.8
        pred = ensemble_predict(EnsembleConfig(), fmri, pheno)
        assert np.mean(pred == y) == 1.0

    @settings(max_examples=100)
    @given(st.lists(st.integers(0, 1), min_size=1, max_size=60), st.data())
    def test_exactness_property(self, y, data):
        y = np.array(y)
        fmri = np.array([1 if t else data.draw(st.integers(0, 1)) for t in y])
        assert np.all(ensemble_predict(EnsembleConfig(), fmri, y) == y)

    @settings(max_examples=60)
    @given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=30),
           st.floats(0.51, 1.0))
    def test_monotone_toward_pheno(self, pairs, w):
        f, p = np.array(pairs).T
        cfg = EnsembleConfig(w_fmri=1 - w, w_pheno=w)
        np.testing.assert_array_equal(ensemble_predict(cfg, f, p), p)


class TestMetrics:
    def test_closed_form(self):
        rep = EvalReport("m", "d", [0, 1], np.array([[50, 0], [10, 60]]))
        assert rep.n_test == 120
        assert rep.accuracy == pytest.approx(110 / 120)
        assert rep.precision[1] == 1.0
        assert rep.recall[1] == pytest.approx(60 / 70)
        f1 = 2 * (60 / 70) / (1 + 60 / 70)
        assert rep.f1[1] == pytest.approx(f1)
        assert rep.to_json()["averaging"] == "macro"

    def test_ninety_two_point_five(self):
        y = np.zeros(120, int)
        pred = y.copy()
        pred[:9] = 1
        assert evaluate(pred, None, y).accuracy == 111 / 120 == 0.925

    def test_rows_are_truth(self):
        rep = evaluate(np.array([1, 1, 0]), None, np.array([0, 1, 1]), labels=[0, 1])
        np.testing.assert_array_equal(rep.confusion, [[0, 1], [1, 1]])
        np.testing.assert_array_equal(rep.confusion.sum(axis=1), [1, 2])

    def test_perfect_model(self, rng):
        X = rng.normal(size=(15, 2))
        y = rng.integers(0, 3, 15)
        rep = evaluate(knn_fit(X, y, 1), X, y)
        assert rep.accuracy == 1.0
        assert np.count_nonzero(rep.confusion - np.diag(np.diag(rep.confusion))) == 0
        assert rep.metadata["kind"] == "knn"

    def test_shape_mismatch(self, rng):
        m = knn_fit(rng.normal(size=(5, 1)), [0, 1, 0, 1, 0], 1)
        with pytest.raises(ShapeMismatch):
            evaluate(m, np.zeros((3, 1)), [0, 1])

    def test_zero_division(self):
        rep = EvalReport("m", "d", [0, 1], np.array([[5, 0], [0, 0]]))
        np.testing.assert_array_equal(rep.precision, [1.0, 0.0])
        np.testing.assert_array_equal(rep.f1, [1.0, 0.0])


class TestEmit:
    def reports(self):
        y = np.array([0, 1, 1, 0, 1])
        names = ["mlp", "svm", "logreg", "knn", "rf", "adaboost"]
        return [evaluate(np.roll(y, i), None, y, labels=[0, 1], name=n, dataset="phenotypic")
                for i, n in enumerate(names)]

    def test_six_rows(self, tmp_path):
        emit_report(self.reports(), tmp_path)
        lines = (tmp_path / "comparison.csv").read_text().splitlines()
        assert lines[0] == "dataset,model,accuracy,macro_f1,n_test"
        assert len(lines) == 7 and all(l.startswith("phenotypic,") for l in lines[1:])
        confusion = (tmp_path / "confusion_phenotypic_svm.csv").read_text().splitlines()
        assert confusion[0] == "true\\pred,0,1"

    def test_byte_identical(self, tmp_path):
        a = emit_report(self.reports(), tmp_path / "a")
        b = emit_report(self.reports(), tmp_path / "b")
        assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]
        assert len(a) == 8

    def test_empty(self, tmp_path):
        with pytest.raises(ValueError):
            emit_report([], tmp_path)
