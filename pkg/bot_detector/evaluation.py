"""Cluster labeling, classification metrics and feature importance."""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .clustering import NOISE
from .exceptions import EvaluationError, LabelError
from .ingest import GENUINE

logger = logging.getLogger(__name__)

BOT = 1


@dataclass(frozen=True)
class PredictionVector:
    user_ids: tuple
    values: np.ndarray

    def to_frame(self):
        return pd.DataFrame({
            'user_id': list(self.user_ids),
            'predicted_class': self.values,
        })


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""
    counts: np.ndarray
    class_ids: tuple

    @property
    def total(self):
        return int(self.counts.sum())

    def normalized(self):
        rows = self.counts.sum(axis=1, keepdims=True)
        return np.divide(
            self.counts, rows,
            out=np.zeros(self.counts.shape), where=rows > 0,
        )

    def to_frame(self, names=None):
        names = names or {}
        labels = [names.get(c, str(c)) for c in self.class_ids]
        return pd.DataFrame(
            self.counts,
            index=pd.Index(labels, name='true'),
            columns=labels,
        )


@dataclass
class ClassMetrics:
    class_id: int
    name: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    per_class: list
    precision: float
    recall: float
    f1: float
    accuracy: float
    mcc: float
    support: int
    confusion: list = field(default_factory=list)
    confusion_normalized: list = field(default_factory=list)

    def to_dict(self):
        return {
            'per_class': [vars(m) for m in self.per_class],
            'weighted': {
                'precision': self.precision,
                'recall': self.recall,
                'f1': self.f1,
            },
            'accuracy': self.accuracy,
            'mcc': self.mcc,
            'support': self.support,
            'confusion_matrix': self.confusion,
            'confusion_matrix_normalized': self.confusion_normalized,
        }


@dataclass
class ImportanceReport:
    features: tuple
    baseline_f1: float
    ablated_f1: list
    scores: list
    importance: list

    def to_dict(self):
        return {
            'baseline_f1': self.baseline_f1,
            'features': [
                {
                    'feature': name,
                    'ablated_f1': ablated,
                    'score': score,
                    'importance': importance,
                }
                for name, ablated, score, importance in zip(
                    self.features, self.ablated_f1, self.scores,
                    self.importance,
                )
            ],
        }


def assign_labels_binary(assignment, genuine_cluster=None):
    """Noise and `genuine_cluster` map to genuine; other clusters to bot."""
    values = np.where(assignment.labels == NOISE, GENUINE, BOT)
    if genuine_cluster is not None:
        values[assignment.labels == genuine_cluster] = GENUINE
    return PredictionVector(
        user_ids=assignment.user_ids, values=values.astype(np.int64)
    )


def assign_labels_multiclass(assignment, labels):
    """Noise -> genuine; each cluster -> its most frequent true class.

    Majority ties go to the lowest class id.
    """
    if not len(assignment.user_ids):
        raise EvaluationError('cannot label an empty assignment')
    missing = [u for u in assignment.user_ids if u not in labels]
    if missing:
        raise LabelError(
            f'{len(missing)} clustered users have no label, '
            f'e.g. {missing[0]!r}'
        )
    truth = np.array([labels[u] for u in assignment.user_ids])
    values = np.full(truth.size, GENUINE, dtype=np.int64)
    for cluster_id in assignment.cluster_ids:
        members = assignment.members(cluster_id)
        counts = np.bincount(truth[members])
        values[members] = int(np.argmax(counts))
    return PredictionVector(user_ids=assignment.user_ids, values=values)


def confusion_matrix(truth, pred, class_ids=None):
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.shape != pred.shape:
        raise EvaluationError(
            f'{truth.size} true labels vs {pred.size} predictions'
        )
    if class_ids is None:
        class_ids = sorted(set(truth.tolist()) | set(pred.tolist()))
    class_ids = tuple(int(c) for c in class_ids)
    index = {c: k for k, c in enumerate(class_ids)}
    unknown = (set(truth.tolist()) | set(pred.tolist())) - set(index)
    if unknown:
        raise EvaluationError(f'labels {sorted(unknown)} not in class set')
    counts = np.zeros((len(class_ids), len(class_ids)), dtype=np.int64)
    rows = np.array([index[c] for c in truth.tolist()], dtype=np.int64)
    cols = np.array([index[c] for c in pred.tolist()], dtype=np.int64)
    np.add.at(counts, (rows, cols), 1)
    return ConfusionMatrix(counts=counts, class_ids=class_ids)


def _ratio(numerator, denominator):
    return float(numerator / denominator) if denominator else 0.0


def matthews_corrcoef(counts):
    """Multi-class MCC from confusion-matrix marginals (0 if undefined)."""
    counts = np.asarray(counts, dtype=np.float64)
    correct = np.trace(counts)
    total = counts.sum()
    true_sums = counts.sum(axis=1)
    pred_sums = counts.sum(axis=0)
    numerator = correct * total - np.dot(pred_sums, true_sums)
    left = total ** 2 - np.dot(pred_sums, pred_sums)
    right = total ** 2 - np.dot(true_sums, true_sums)
    if left == 0 or right == 0:
        return 0.0
    return float(numerator / math.sqrt(left * right))


def prf_metrics(cm, names=None):
    counts = np.asarray(cm.counts)
    if counts.size == 0 or counts.sum() == 0:
        raise EvaluationError('confusion matrix is empty')
    names = names or {}
    tp = np.diag(counts)
    true_sums = counts.sum(axis=1)
    pred_sums = counts.sum(axis=0)
    per_class = []
    for k, class_id in enumerate(cm.class_ids):
        precision = _ratio(tp[k], pred_sums[k])
        recall = _ratio(tp[k], true_sums[k])
        f1 = _ratio(2 * precision * recall, precision + recall)
        per_class.append(ClassMetrics(
            class_id=class_id,
            name=names.get(class_id, str(class_id)),
            precision=precision,
            recall=recall,
            f1=f1,
            support=int(true_sums[k]),
        ))
    total = int(counts.sum())
    weights = true_sums / total

    def weighted(attribute):
        return float(sum(
            w * getattr(m, attribute) for w, m in zip(weights, per_class)
        ))

    return MetricsReport(
        per_class=per_class,
        precision=weighted('precision'),
        recall=weighted('recall'),
        f1=weighted('f1'),
        accuracy=float(tp.sum() / total),
        mcc=matthews_corrcoef(counts),
        support=total,
        confusion=counts.tolist(),
        confusion_normalized=cm.normalized().tolist(),
    )


def feature_importance(pipeline_runner, full_features):
    """Ablation importance: S_i = f_{-i} / f, normalized over max(0, 1-S_i).

    `pipeline_runner` maps a tuple of feature names to the weighted f1 of
    a full pipeline run on those features.
    """
    full_features = tuple(full_features)
    if len(full_features) < 2:
        raise EvaluationError('importance needs two or more features')
    baseline = float(pipeline_runner(full_features))
    if baseline == 0.0:
        raise EvaluationError('baseline f1 is 0; importance is undefined')
    ablated, scores = [], []
    for name in full_features:
        subset = tuple(f for f in full_features if f != name)
        score = float(pipeline_runner(subset))
        logger.info('Without %s: f1 %.4f (baseline %.4f)', name, score,
                    baseline)
        ablated.append(score)
        scores.append(score / baseline)
    gains = [max(0.0, 1.0 - s) for s in scores]
    total = sum(gains)
    if total > 0:
        importance = [g / total for g in gains]
    else:
        importance = [0.0] * len(gains)
    return ImportanceReport(
        features=full_features,
        baseline_f1=baseline,
        ablated_f1=ablated,
        scores=scores,
        importance=importance,
    )
