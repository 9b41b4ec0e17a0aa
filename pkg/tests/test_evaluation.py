import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from palstm.data import WindowedSample
from palstm.evaluation import (
    METRIC_NAMES,
    ConfusionMatrix,
    class_metrics,
    confusion,
    cross_validate,
    evaluate_scores,
    partition_normals,
    roc_auc,
)
from palstm.model import ModelConfig
from palstm.training import TrainConfig


class TestConfusion:
    def test_perfect(self):
        cm = confusion([0, 1, 1, 0], [0, 1, 1, 0])
        assert cm.fp == cm.fn == 0

    def test_inverted(self):
        cm = confusion([0, 1, 1, 0], [1, 0, 0, 1])
        assert cm.tp == cm.tn == 0

    def test_counting_loop(self, rng):
        y, p = rng.integers(0, 2, 50), rng.integers(0, 2, 50)
        counts = {"tp": 0, "tn": 0, "fp": 0, "fn": 0}
        for a, b in zip(y, p):
            counts[("t" if a == b else "f") + ("p" if b == 1 else "n")] += 1
        assert confusion(y, p) == ConfusionMatrix(**counts)


class TestClassMetrics:
    def test_perfect(self):
        m = class_metrics(ConfusionMatrix(tp=3, tn=4, fp=0, fn=0))
        assert all(getattr(m, k) == 1.0 for k in METRIC_NAMES if k != "auc")

    def test_small_case(self):
        m = class_metrics(ConfusionMatrix(tp=1, tn=0, fp=1, fn=0))
        assert (m.precision_1, m.recall_1) == (0.5, 1.0)
        assert m.f1_1 == pytest.approx(2 / 3)

    def test_zero_denominators(self):
        m = class_metrics(ConfusionMatrix(tp=0, tn=0, fp=0, fn=5))
        assert (m.precision_1, m.recall_1, m.f1_1) == (0.0, 0.0, 0.0)

    def test_normal_class_swaps_roles(self):
        m = class_metrics(ConfusionMatrix(tp=2, tn=6, fp=2, fn=1))
        assert m.precision_0 == pytest.approx(6 / 7)
        assert m.recall_0 == pytest.approx(6 / 8)
        assert m.accuracy == pytest.approx(8 / 11)


class TestRoc:
    def test_separable(self):
        assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]).auc == 1.0

    def test_all_tied(self):
        assert roc_auc([0.3] * 6, [0, 1, 0, 1, 1, 0]).auc == 0.5

    def test_known_case(self):
        assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]).auc == pytest.approx(0.75)

    def test_curve_endpoints(self, rng):
        roc = roc_auc(rng.normal(size=20), np.r_[np.zeros(10), np.ones(10)])
        assert (roc.fpr[0], roc.tpr[0], roc.fpr[-1], roc.tpr[-1]) == (0.0, 0.0, 1.0, 1.0)
        assert np.all(np.diff(roc.fpr) >= 0) and np.all(np.diff(roc.tpr) >= 0)

    def test_single_class(self):
        with pytest.raises(ValueError):
            roc_auc([0.1, 0.2], [1, 1])

    @settings(max_examples=80)
    @given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 1)), min_size=2, max_size=40))
    def test_rank_statistic(self, pairs):
        scores = [float(s) for s, _ in pairs]
        labels = [y for _, y in pairs]
        if len(set(labels)) < 2:
            return
        assert roc_auc(scores, labels).auc == pytest.approx(oracles.auc(scores, labels), abs=1e-12)

    def test_evaluate_scores_flags_strictly_above(self):
        metrics, cm, _ = evaluate_scores([0.5, 1.0, 2.0], [0, 0, 1], lam=1.0)
        assert (cm.tp, cm.fp, cm.tn) == (1, 0, 2)
        assert metrics.auc == 1.0


class TestPartition:
    @given(st.integers(5, 60), st.integers(2, 5), st.integers(0, 1000))
    def test_partition_property(self, n, folds, seed):
        parts = partition_normals(n, folds, seed)
        joined = np.concatenate(parts)
        assert len(parts) == folds
        assert sorted(joined.tolist()) == list(range(n))

    def test_too_few(self):
        with pytest.raises(ValueError):
            partition_normals(3, 5, 0)


@pytest.fixture(scope="module")
def cv(small_windows):
    normal = [WindowedSample(w.values, w.mileage) for w in small_windows[:20]]
    fault = [WindowedSample(w.values + 2.0, w.mileage, label=1) for w in small_windows[20:24]]
    result = cross_validate(normal, fault, ModelConfig(T=8, D=4, K=1, hidden_size=3), TrainConfig(epochs=1))
    return result, len(normal), len(fault)


class TestCrossValidate:
    def test_folds_partition_normals(self, cv):
        result, n_normal, n_fault = cv
        idx = np.concatenate([f.test_normal_index for f in result.folds])
        assert len(result.folds) == 5
        assert sorted(idx.tolist()) == list(range(n_normal))
        for f in result.folds:
            assert int(f.labels.sum()) == n_fault
            assert len(f.labels) == len(f.test_normal_index) + n_fault

    def test_aggregate_recomputed(self, cv):
        result, _, _ = cv
        aucs = [f.metrics.auc for f in result.folds]
        mean = sum(aucs) / len(aucs)
        assert result.mean["auc"] == pytest.approx(mean)
        assert result.std["auc"] == pytest.approx((sum((a - mean) ** 2 for a in aucs) / len(aucs)) ** 0.5)

    def test_report_layout(self, cv):
        result, _, _ = cv
        lines = result.to_csv().splitlines()
        assert lines[0].split(",")[:2] == ["fold", "precision_0"]
        assert [ln.split(",")[0] for ln in lines[1:]] == ["0", "1", "2", "3", "4", "mean", "std"]
        assert result.roc_csv().startswith("fold,fpr,tpr\n0,0.0,0.0\n")

    def test_needs_faults(self, small_windows):
        normal = [WindowedSample(w.values, w.mileage) for w in small_windows[:10]]
        with pytest.raises(ValueError):
            cross_validate(normal, [], ModelConfig(T=8, D=4, K=1, hidden_size=3), TrainConfig(epochs=0))
