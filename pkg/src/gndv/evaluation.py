"""Embedding quality: k-NN classification metrics and trustworthiness."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import kernels

# float64 elements materialised per distance block
_BLOCK_BUDGET = 1 << 23


@dataclass(frozen=True)
class ClassificationReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: np.ndarray

    def metrics(self) -> dict[str, float]:
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
        }

    def write_confusion_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(self.confusion.tolist())


@dataclass(frozen=True)
class TrustScore:
    value: float
    n_neighbors: int


def _row_blocks(n_rows, n_cols, d):
    step = max(1, _BLOCK_BUDGET // max(1, n_cols * d))
    for start in range(0, n_rows, step):
        yield slice(start, min(n_rows, start + step))


def _sq_distances(A, B):
    diff = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def knn_predict(train_emb, train_labels, query_emb, k: int) -> np.ndarray:
    """Majority vote of the k nearest training rows (Euclidean).

    Distance ties go to the smaller training index, vote ties to the
    smaller class id.
    """
    train_emb = np.atleast_2d(np.asarray(train_emb, dtype=np.float64))
    query_emb = np.atleast_2d(np.asarray(query_emb, dtype=np.float64))
    train_labels = np.asarray(train_labels, dtype=np.int64)
    n_train = train_emb.shape[0]
    if n_train == 0:
        raise ValueError("empty training set")
    if not 1 <= k <= n_train:
        raise ValueError(f"k must be in [1, {n_train}], got {k}")
    if train_labels.shape != (n_train,):
        raise ValueError("one label per training row required")
    n_classes = int(train_labels.max()) + 1
    out = np.empty(query_emb.shape[0], dtype=np.int64)
    for rows in _row_blocks(query_emb.shape[0], n_train, train_emb.shape[1]):
        dist = _sq_distances(query_emb[rows], train_emb)
        nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
        out[rows] = kernels.knn_vote(np.ascontiguousarray(train_labels[nearest]), n_classes)
    return out


def classification_report(pred, truth, c: int) -> ClassificationReport:
    """Accuracy plus macro-averaged precision, recall and F1 (0/0 taken as 0)."""
    pred, truth = np.asarray(pred, dtype=np.int64), np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    for name, arr in (("pred", pred), ("truth", truth)):
        if arr.size and (arr.min() < 0 or arr.max() >= c):
            raise ValueError(f"{name} labels must lie in [0, {c})")
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (truth, pred), 1)
    tp = np.diag(confusion).astype(np.float64)
    predicted = confusion.sum(axis=0)
    actual = confusion.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros(c), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros(c), where=actual > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(c), where=denom > 0)
    total = confusion.sum()
    accuracy = float(tp.sum() / total) if total else 0.0
    return ClassificationReport(accuracy, float(precision.mean()), float(recall.mean()),
                                float(f1.mean()), confusion)


def trustworthiness(X_high, embedding, k: int) -> TrustScore:
    """Rank-based trustworthiness of ``embedding`` with respect to ``X_high``.

    T(k) = 1 - 2 / (n k (2n - 3k - 1)) * sum_i sum_{j in U_k(i)} (r(i, j) - k)

    where U_k(i) holds the embedding-space k nearest neighbours of i that are
    not among its k nearest in the original space, and r(i, j) is the rank of
    j by original-space distance from i (self excluded, nearest is 1). Equal
    distances rank by index.
    """
    X_high = np.asarray(X_high, dtype=np.float64)
    embedding = np.asarray(embedding, dtype=np.float64)
    if X_high.ndim == 1:
        X_high = X_high[:, None]
    if embedding.ndim == 1:
        embedding = embedding[:, None]
    n = X_high.shape[0]
    if embedding.shape[0] != n:
        raise ValueError(f"row count mismatch: {n} vs {embedding.shape[0]}")
    if not 1 <= k < n / 2:
        raise ValueError(f"k must satisfy 1 <= k < n/2 (n={n}), got {k}")
    ranks_of_nbrs = np.empty((n, k), dtype=np.int64)
    width = max(X_high.shape[1], embedding.shape[1])
    for rows in _row_blocks(n, n, width):
        idx = np.arange(rows.start, rows.stop)
        d_high = _sq_distances(X_high[rows], X_high)
        d_low = _sq_distances(embedding[rows], embedding)
        # self sorts first, taking rank 0
        d_high[np.arange(len(idx)), idx] = -1.0
        d_low[np.arange(len(idx)), idx] = -1.0
        order_high = np.argsort(d_high, axis=1, kind="stable")
        rank_high = np.empty_like(order_high)
        np.put_along_axis(rank_high, order_high, np.arange(n)[None, :].repeat(len(idx), 0), axis=1)
        nbrs_low = np.argsort(d_low, axis=1, kind="stable")[:, 1:k + 1]
        ranks_of_nbrs[rows] = np.take_along_axis(rank_high, nbrs_low, axis=1)
    penalty = kernels.trust_penalty(ranks_of_nbrs, k)
    value = 1.0 - 2.0 / (n * k * (2 * n - 3 * k - 1)) * penalty
    return TrustScore(float(value), k)
