"""Detection metrics, ROC analysis and the normal-only k-fold protocol.

Class 1 (fault) is the positive class throughout. Undefined ratios
(zero denominators) are reported as 0.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import stack_windows
from .model import ModelConfig
from .training import TrainConfig, derive_seed, fit_arrays

METRIC_NAMES = ("precision_0", "recall_0", "f1_0", "precision_1", "recall_1", "f1_1", "accuracy", "auc")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion(labels, predictions) -> ConfusionMatrix:
    y = np.asarray(labels).reshape(-1)
    p = np.asarray(predictions).reshape(-1)
    if y.shape != p.shape:
        raise ValueError(f"{y.size} labels vs {p.size} predictions")
    return ConfusionMatrix(
        tp=int(np.sum((y == 1) & (p == 1))),
        tn=int(np.sum((y == 0) & (p == 0))),
        fp=int(np.sum((y == 0) & (p == 1))),
        fn=int(np.sum((y == 1) & (p == 0))),
    )


def _ratio(a, b):
    return a / b if b else 0.0


def _prf(tp, fp, fn):
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    return precision, recall, _ratio(2 * precision * recall, precision + recall)


@dataclass(frozen=True)
class ClassMetrics:
    precision_0: float
    recall_0: float
    f1_0: float
    precision_1: float
    recall_1: float
    f1_1: float
    accuracy: float
    auc: float = float("nan")

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def class_metrics(cm: ConfusionMatrix, auc: float = float("nan")) -> ClassMetrics:
    if cm.total < 1:
        raise ValueError("confusion matrix is empty")
    p1, r1, f1 = _prf(cm.tp, cm.fp, cm.fn)
    # class 0 swaps the roles of positives and negatives
    p0, r0, f0 = _prf(cm.tn, cm.fn, cm.fp)
    return ClassMetrics(p0, r0, f0, p1, r1, f1, (cm.tp + cm.tn) / cm.total, auc)


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def roc_auc(scores, labels) -> RocCurve:
    """Sweep a threshold down through the distinct scores; integrate by trapezoids.

    Tied scores move FPR and TPR together, which gives ties half credit,
    so the area equals P(s_fault > s_normal) + P(s_fault == s_normal) / 2.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores vs {y.size} labels")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both normal and fault samples")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tps = np.cumsum(y == 1)[last]
    fps = np.cumsum(y == 0)[last]
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=np.r_[np.inf, s[last]], auc=auc)


@dataclass
class FoldResult:
    fold: int
    metrics: ClassMetrics
    confusion: ConfusionMatrix
    lam: float
    scores: np.ndarray
    labels: np.ndarray
    roc: RocCurve
    test_normal_index: np.ndarray


def evaluate_scores(scores, labels, lam) -> tuple[ClassMetrics, ConfusionMatrix, RocCurve]:
    """Flag ``score > lam`` for the count metrics; use raw scores for the ROC."""
    labels = np.asarray(labels)
    cm = confusion(labels, (np.asarray(scores) > lam).astype(np.int64))
    roc = roc_auc(scores, labels)
    return class_metrics(cm, roc.auc), cm, roc


@dataclass
class CrossValidationResult:
    folds: list
    mean: dict
    std: dict

    def to_csv(self) -> str:
        head = ("fold",) + METRIC_NAMES + ("threshold", "tp", "tn", "fp", "fn")
        lines = [",".join(head)]
        for f in self.folds:
            m = f.metrics.as_dict()
            c = f.confusion
            vals = [repr(float(m[k])) for k in METRIC_NAMES] + [repr(float(f.lam)), c.tp, c.tn, c.fp, c.fn]
            lines.append(",".join(map(str, [f.fold] + vals)))
        for label, agg in (("mean", self.mean), ("std", self.std)):
            lines.append(",".join([label] + [repr(float(agg[k])) for k in METRIC_NAMES] + [""] * 5))
        return "\n".join(lines) + "\n"

    def roc_csv(self) -> str:
        lines = ["fold,fpr,tpr"]
        for f in self.folds:
            lines.extend(f"{f.fold},{x!r},{y!r}" for x, y in zip(f.roc.fpr.tolist(), f.roc.tpr.tolist()))
        return "\n".join(lines) + "\n"


def partition_normals(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Disjoint index sets covering ``range(n)``, from a seeded permutation."""
    if folds < 2 or n < folds:
        raise ValueError(f"need at least {folds} >= 2 normal samples, got {n}")
    perm = np.random.default_rng(derive_seed(seed, "partition")).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def cross_validate(
    normal_set,
    fault_set,
    model_config: ModelConfig,
    train_config: TrainConfig,
    folds: int = 5,
    seed_path=(),
    epsilon: float = 1e-6,
) -> CrossValidationResult:
    """Train on all-but-one normal part; test on the held-out part plus every fault window."""
    if not fault_set:
        raise ValueError("fault set is empty")
    Xn, mn, _ = stack_windows(normal_set)
    Xf, mf, _ = stack_windows(fault_set)
    parts = partition_normals(len(Xn), folds, train_config.seed)
    results = []
    for i, test_idx in enumerate(parts):
        train_idx = np.sort(np.concatenate([p for j, p in enumerate(parts) if j != i]))
        cfg = replace(train_config, seed=derive_seed(train_config.seed, *seed_path, i))
        fitted = fit_arrays(Xn[train_idx], mn[train_idx], model_config, cfg, epsilon)
        X_test = np.concatenate([Xn[test_idx], Xf])
        m_test = np.concatenate([mn[test_idx], mf])
        y_test = np.r_[np.zeros(len(test_idx), dtype=np.int64), np.ones(len(Xf), dtype=np.int64)]
        scores = fitted.score(X_test, m_test)
        metrics, cm, roc = evaluate_scores(scores, y_test, fitted.threshold.lam)
        results.append(FoldResult(i, metrics, cm, fitted.threshold.lam, scores, y_test, roc, test_idx))
    table = np.array([[r.metrics.as_dict()[k] for k in METRIC_NAMES] for r in results])
    return CrossValidationResult(
        folds=results,
        mean=dict(zip(METRIC_NAMES, table.mean(axis=0))),
        std=dict(zip(METRIC_NAMES, table.std(axis=0))),
    )
