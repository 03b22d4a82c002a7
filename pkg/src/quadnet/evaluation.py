"""Classification and retrieval metrics over the C+1 labels (outliers included)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx
from .errors import DomainError
from .model import predict_from_probs


@dataclass
class ConfusionMatrix:
    """Rows are true labels, columns predictions, both ordered -1, 0, ..., C-1."""

    counts: np.ndarray

    @property
    def labels(self) -> list[int]:
        return list(range(-1, self.counts.shape[0] - 1))

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class ClassificationScores:
    balanced_accuracy: float
    precision: float
    recall: float
    f1: float


@dataclass
class MetricsReport:
    balanced_accuracy: float
    f1: float
    precision: float
    recall: float
    map: float
    precision_at_k: float
    map_at_k: float
    k: int

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, path, **extra) -> None:
        Path(path).write_text(json.dumps({**self.to_dict(), **extra}, indent=2, sort_keys=True) + "\n")


def confusion(preds, labels, num_classes: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise DomainError(f"{len(preds)} predictions for {len(labels)} labels")
    k = num_classes + 1
    for name, arr in (("prediction", preds), ("label", labels)):
        if arr.size and (arr.min() < -1 or arr.max() >= num_classes):
            raise IndexError(f"{name} outside -1..{num_classes - 1}")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (labels + 1, preds + 1), 1)
    return ConfusionMatrix(counts)


def classification_metrics(cm: ConfusionMatrix) -> ClassificationScores:
    """Macro scores over every label with at least one true sample."""
    c = cm.counts.astype(np.float64)
    if cm.total == 0:
        raise DomainError("confusion matrix is empty")
    support = c.sum(axis=1)
    present = support > 0
    tp = np.diag(c)
    predicted = c.sum(axis=0)
    recall = tp[present] / support[present]
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)[present]
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(denom), where=denom > 0)
    return ClassificationScores(
        balanced_accuracy=float(recall.mean()),
        precision=float(precision.mean()),
        recall=float(recall.mean()),
        f1=float(f1.mean()),
    )


def average_precision(scores, relevant) -> float:
    """AP for one ranking: descending score, ties resolved by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    relevant = np.asarray(relevant, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    hits = relevant[order]
    if not hits.any():
        raise DomainError("no relevant items")
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, len(ranks) + 1) / ranks))


def mean_average_precision(probs, labels) -> float:
    """Mean over present labels of the AP obtained by ranking on that label's column.

    Column j of ``probs`` is softmax index j, i.e. label j - 1.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    aps = []
    for j in range(probs.shape[1]):
        rel = labels == j - 1
        if rel.any():
            aps.append(average_precision(probs[:, j], rel))
    if not aps:
        raise DomainError("no positive samples for any class")
    return float(np.mean(aps))


def _neighbours(embeddings: np.ndarray, k: int, chunk: int = 256) -> np.ndarray:
    x = np.asarray(embeddings, dtype=np.float64)
    n = len(x)
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk):
        block = x[start : start + chunk]
        # exact differences, so equal distances compare equal and fall back to index order
        d2 = ((block[:, None, :] - x[None, :, :]) ** 2).sum(axis=-1)
        rows = np.arange(len(block))
        d2[rows, start + rows] = np.inf
        out[start : start + len(block)] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def retrieval_at_k(embeddings, labels, k: int = 10) -> tuple[float, float]:
    """(precision@k, mAP@k) over Euclidean nearest neighbours, query excluded."""
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if k < 1 or k >= n:
        raise DomainError(f"k must lie in [1, N-1]; got k={k} with N={n}")
    nn = _neighbours(embeddings, k)
    rel = labels[nn] == labels[:, None]
    precision = float(rel.mean(axis=1).mean())
    same = np.bincount(labels + 1, minlength=labels.max() + 2)[labels + 1] - 1
    cum = np.cumsum(rel, axis=1) / np.arange(1, k + 1)
    aps = []
    for q in range(n):
        if same[q] == 0:
            continue
        aps.append((cum[q] * rel[q]).sum() / min(k, same[q]))
    return precision, float(np.mean(aps)) if aps else 0.0


def evaluate(model, dataset, k: int = 10) -> MetricsReport:
    """Full metric suite from one eval-mode forward pass."""
    if dataset.n == 0:
        raise DomainError("cannot evaluate an empty dataset")
    model.eval()
    emb, logits = model.forward(nx.Tensor(dataset.features))
    probs = nx.softmax(logits).data
    preds = predict_from_probs(probs)
    scores = classification_metrics(confusion(preds, dataset.labels, model.config.num_classes))
    p_at_k, map_at_k = retrieval_at_k(emb.data, dataset.labels, k)
    return MetricsReport(
        balanced_accuracy=scores.balanced_accuracy,
        f1=scores.f1,
        precision=scores.precision,
        recall=scores.recall,
        map=mean_average_precision(probs, dataset.labels),
        precision_at_k=p_at_k,
        map_at_k=map_at_k,
        k=k,
    )
