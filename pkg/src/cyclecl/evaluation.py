"""Weighted k-NN periodicity classification and ranking metrics.

The positive class everywhere is ``NON_PERIODIC`` (label 1). Ties are broken
by lower original index.
"""

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import EmptyInputError, ProtocolError
from .neighbors import kneighbors
from .seqdata import NON_PERIODIC, PERIODIC
from .validation import check_embeddings

DEFAULT_K = 10
DEFAULT_EPS = 1e-8


def _binary(labels, name="labels"):
    y = np.asarray(labels).ravel()
    if y.size and not np.isin(y, (0, 1)).all():
        raise ValueError(f"{name} must be 0/1")
    return y.astype(np.int64)


def _scores_labels(scores, labels):
    s = np.asarray(scores, dtype=float).ravel()
    y = _binary(labels)
    if s.shape != y.shape:
        raise ValueError(f"scores and labels differ in length ({s.size} vs {y.size})")
    if not np.isfinite(s).all():
        raise ValueError("scores contain NaN or inf")
    return s, y


def vote(labels, distances, eps=DEFAULT_EPS):
    """Weighted vote of one neighbour set: returns (label, score).

    alpha_i = 1 / (d_i^2 + eps); score = w_N / (w_P + w_N); ties go to periodic.
    """
    labels = np.asarray(labels)
    w = 1.0 / (np.asarray(distances, dtype=float) ** 2 + eps)
    w_n = w[labels == NON_PERIODIC].sum()
    w_p = w[labels == PERIODIC].sum()
    label = NON_PERIODIC if w_n > w_p else PERIODIC
    return label, float(w_n / (w_p + w_n))


def knn_classify(query, reference, reference_labels, reference_groups, query_group, k=DEFAULT_K, eps=DEFAULT_EPS):
    """Classify one embedding from its ``k`` nearest references outside ``query_group``.

    Returns ``(label, score, neighbor_indices)``.
    """
    q = np.asarray(query, dtype=float)[None]
    groups = np.asarray(reference_groups)
    if (groups != query_group).sum() < k:
        raise ProtocolError(f"fewer than k={k} reference items from other videos")
    idx, dist = kneighbors(q, reference, k, q_groups=[query_group], r_groups=groups)[0]
    label, score = vote(np.asarray(reference_labels)[idx], dist, eps)
    return label, score, idx


class WeightedKNNClassifier(ClassifierMixin, BaseEstimator):
    """Distance-weighted k-NN with optional group exclusion.

    When ``groups`` are passed to ``fit`` and to the prediction methods, a
    query never uses reference rows from its own group.
    """

    def __init__(self, k=DEFAULT_K, eps=DEFAULT_EPS):
        self.k = k
        self.eps = eps

    def fit(self, X, y, groups=None):
        self.X_ = check_embeddings(X, "X")
        self.y_ = _binary(y, "y")
        if len(self.y_) != len(self.X_):
            raise ValueError("X and y differ in length")
        self.groups_ = None if groups is None else np.asarray(groups)
        self.classes_ = np.array([PERIODIC, NON_PERIODIC])
        return self

    def kneighbors(self, X, groups=None):
        check_is_fitted(self, "X_")
        X = check_embeddings(X, "X")
        if groups is not None and self.groups_ is None:
            raise ProtocolError("query groups given but the classifier was fitted without groups")
        try:
            return kneighbors(
                X, self.X_, self.k,
                q_groups=groups, r_groups=self.groups_ if groups is not None else None,
            )
        except EmptyInputError as exc:
            raise ProtocolError(str(exc)) from exc

    def _vote_all(self, X, groups):
        out = [vote(self.y_[idx], dist, self.eps) for idx, dist in self.kneighbors(X, groups)]
        return np.array([o[0] for o in out], dtype=np.int64), np.array([o[1] for o in out])

    def predict(self, X, groups=None):
        return self._vote_all(X, groups)[0]

    def decision_function(self, X, groups=None):
        return self._vote_all(X, groups)[1]

    def predict_proba(self, X, groups=None):
        s = self.decision_function(X, groups)
        return np.column_stack([1.0 - s, s])


def average_precision(scores, labels):
    """Mean precision at the rank of each positive, descending score,
    ties in original order."""
    s, y = _scores_labels(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("average precision is undefined without positive labels")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    precision = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float(precision[hits == 1].sum() / n_pos)


def f1_score(predictions, labels):
    p, y = _binary(predictions, "predictions"), _binary(labels)
    if p.shape != y.shape:
        raise ValueError("predictions and labels differ in length")
    tp = int(((p == 1) & (y == 1)).sum())
    fp = int(((p == 1) & (y == 0)).sum())
    fn = int(((p == 0) & (y == 1)).sum())
    if tp == 0:
        return 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def _sweep(s, y):
    """Descending distinct thresholds with the true-positive and predicted
    counts of ``score >= threshold``."""
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    tp = np.cumsum(y[order])
    # last position of each distinct score in descending order
    last = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    return s_sorted[last], tp[last], last + 1


def pr_curve(scores, labels):
    """(threshold, precision, recall) for every distinct score, ascending
    threshold; an item is predicted positive when score >= threshold."""
    s, y = _scores_labels(scores, labels)
    n_pos = int(y.sum())
    thr, tp, predicted = _sweep(s, y)
    precision = tp / predicted
    recall = tp / n_pos if n_pos else np.zeros(len(tp))
    return thr[::-1].copy(), precision[::-1].copy(), recall[::-1].copy()


def oracle_f1(scores, labels):
    """Best F1 over every threshold between consecutive distinct scores,
    including predicting nothing and predicting everything."""
    s, y = _scores_labels(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        return 0.0
    _, tp, predicted = _sweep(s, y)
    return float((2.0 * tp / (predicted + n_pos)).max())


@dataclass
class MetricsReport:
    ap: float
    f1: float
    oracle_f1: float
    k: int = DEFAULT_K
    eps: float = DEFAULT_EPS
    per_video: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        if not d["extra"]:
            d.pop("extra")
        return d

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def write_pr_curve(path, scores, labels):
    thr, precision, recall = pr_curve(scores, labels)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall"])
        for row in zip(thr, precision, recall):
            w.writerow([repr(float(v)) for v in row])


def _flatten(sequences):
    X, y, groups, frames = [], [], [], []
    for seq in sequences:
        if seq.frame_labels is None:
            raise ValueError(f"sequence {seq.video_id!r} has no frame labels")
        X.append(np.asarray(seq.embeddings, dtype=float))
        y.append(_binary(seq.frame_labels))
        groups.extend([seq.video_id] * len(seq.embeddings))
        frames.append(np.arange(len(seq.embeddings)))
    return np.concatenate(X), np.concatenate(y), np.asarray(groups), np.concatenate(frames)


def metrics_from_scores(scores, predictions, labels, groups, k=DEFAULT_K, eps=DEFAULT_EPS):
    scores, labels = _scores_labels(scores, labels)
    per_video = {}
    for vid in dict.fromkeys(groups.tolist()):
        m = groups == vid
        entry = {"frames": int(m.sum()), "non_periodic": int(labels[m].sum())}
        if predictions is not None:
            entry["f1"] = f1_score(predictions[m], labels[m])
        per_video[vid] = entry
    f1 = f1_score(predictions, labels) if predictions is not None else oracle_f1(scores, labels)
    return MetricsReport(
        ap=average_precision(scores, labels), f1=f1, oracle_f1=oracle_f1(scores, labels),
        k=k, eps=eps, per_video=per_video,
    )


def evaluate_knn(sequences, k=DEFAULT_K, eps=DEFAULT_EPS, normalize=True, return_scores=False):
    """Leave-one-video-out weighted k-NN over labelled embedding sequences.

    With ``normalize`` every embedding is scaled to unit length first.
    """
    sequences = list(sequences)
    ids = {s.video_id for s in sequences}
    if len(ids) < 2:
        raise ProtocolError("leave-one-video-out evaluation needs at least two videos")
    X, y, groups, frames = _flatten(sequences)
    if normalize:
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        X = X / np.maximum(norms, 1e-12)
    clf = WeightedKNNClassifier(k=k, eps=eps).fit(X, y, groups=groups)
    preds, scores = clf._vote_all(X, groups)
    report = metrics_from_scores(scores, preds, y, groups, k, eps)
    if return_scores:
        return report, scores, y, groups, frames
    return report
