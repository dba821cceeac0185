"""Unsupervised anomaly scoring over embeddings or cycle features.

Two scorers: mean distance to the ``k`` nearest frames of a normal
reference pool, and the Local Outlier Factor. Labels are only used for the
metrics computed afterwards.
"""

import csv
import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_is_fitted

from .evaluation import average_precision, metrics_from_scores
from .exceptions import ConfigError, EmptyInputError
from .neighbors import kneighbors
from .tsm import cycle_feature_matrix
from .validation import check_choice, check_embeddings

logger = logging.getLogger(__name__)

FEATURE_KINDS = ("raw", "cycle")
SCORERS = ("nn_distance", "lof")
LRD_FLOOR = 1e-12


@dataclass(frozen=True)
class AnomalyConfig:
    feature_kind: str = "cycle"
    scorer: str = "nn_distance"
    k_score: int = 5
    cycle_window: int = 64

    def validate(self):
        check_choice(self.feature_kind, set(FEATURE_KINDS), "feature_kind")
        check_choice(self.scorer, set(SCORERS), "scorer")
        if self.k_score < 1:
            raise ConfigError(f"k_score must be >= 1, got {self.k_score}")
        if self.cycle_window < 2:
            raise ConfigError(f"cycle_window must be >= 2, got {self.cycle_window}")
        return self


@dataclass(eq=False)
class ScoredSequence:
    video_id: str
    scores: np.ndarray
    labels: np.ndarray = None

    def __len__(self):
        return len(self.scores)


def nn_distance_score(query, reference, k_score=5):
    """Mean Euclidean distance of each query row to its ``k_score`` nearest
    reference rows."""
    Q = check_embeddings(query, "query")
    try:
        R = check_embeddings(reference, "reference")
    except EmptyInputError as exc:
        raise EmptyInputError("nn_distance needs a non-empty reference pool") from exc
    if len(R) < k_score:
        raise EmptyInputError(f"reference pool has {len(R)} rows, fewer than k_score={k_score}")
    return np.array([dist.mean() for _, dist in kneighbors(Q, R, k_score)])


def lof_scores(features, k_score=5):
    """Local Outlier Factor of every row against all other rows.

    The k-neighbourhood includes every point tied with the k-th distance.
    Local reachability density is ``1 / max(mean reach-dist, 1e-12)`` so
    duplicated points stay finite.
    """
    X = check_embeddings(features, "features")
    if len(X) <= k_score:
        raise EmptyInputError(f"LOF needs more than k_score={k_score} points, got {len(X)}")
    hoods = kneighbors(X, X, k_score, exclude_self=True, with_ties=True)
    k_dist = np.array([dist[k_score - 1] for _, dist in hoods])
    lrd = np.empty(len(X))
    for i, (idx, dist) in enumerate(hoods):
        reach = np.maximum(k_dist[idx], dist)
        lrd[i] = 1.0 / max(reach.mean(), LRD_FLOOR)
    return np.array([lrd[idx].mean() / lrd[i] for i, (idx, _) in enumerate(hoods)])


class NNDistanceDetector(OutlierMixin, BaseEstimator):
    """Scores samples by their mean distance to the k nearest fitted rows.

    ``score_samples`` follows the scikit-learn sign convention (higher is more
    normal); ``anomaly_score`` returns the distance itself.
    """

    def __init__(self, k_score=5):
        self.k_score = k_score

    def fit(self, X, y=None):
        self.reference_ = check_embeddings(X, "reference")
        if len(self.reference_) < self.k_score:
            raise EmptyInputError("reference pool smaller than k_score")
        return self

    def anomaly_score(self, X):
        check_is_fitted(self, "reference_")
        return nn_distance_score(X, self.reference_, self.k_score)

    def score_samples(self, X):
        return -self.anomaly_score(X)


class LOFDetector(OutlierMixin, BaseEstimator):
    """Transductive LOF: ``fit_predict``-style scoring of the fitted set."""

    def __init__(self, k_score=5):
        self.k_score = k_score

    def fit(self, X, y=None):
        self.lof_ = lof_scores(X, self.k_score)
        return self

    def anomaly_score(self, X=None):
        check_is_fitted(self, "lof_")
        return self.lof_.copy()


def frame_features(embeddings, cfg):
    emb = check_embeddings(embeddings, "embeddings")
    if cfg.feature_kind == "raw":
        return emb
    return cycle_feature_matrix(emb, cfg.cycle_window)


def score_sequences(sequences, cfg=None, reference_ids=None):
    """Per-frame anomaly scores for every sequence.

    nn_distance compares each video against the frames of ``reference_ids``
    other than itself; with no reference ids (or none besides the query)
    every other video is used and a warning is logged. LOF runs over the
    pooled frames of all sequences.
    """
    cfg = (cfg or AnomalyConfig()).validate()
    sequences = list(sequences)
    if not sequences:
        raise EmptyInputError("no sequences to score")
    feats = {s.video_id: frame_features(s.embeddings, cfg) for s in sequences}
    out = []
    if cfg.scorer == "lof":
        pooled = np.concatenate([feats[s.video_id] for s in sequences])
        lof = lof_scores(pooled, cfg.k_score)
        start = 0
        for s in sequences:
            n = len(feats[s.video_id])
            out.append(ScoredSequence(s.video_id, lof[start:start + n], s.frame_labels))
            start += n
        return out
    ref_ids = set(reference_ids or ())
    for s in sequences:
        pool = [v for v in ref_ids if v != s.video_id]
        if not pool:
            if ref_ids:
                logger.warning("no normal reference besides %s; using all other videos", s.video_id)
            pool = [t.video_id for t in sequences if t.video_id != s.video_id]
        if not pool:
            raise EmptyInputError("nn_distance needs at least one other video")
        ref = np.concatenate([feats[v] for v in sorted(pool)])
        out.append(ScoredSequence(s.video_id, nn_distance_score(feats[s.video_id], ref, cfg.k_score), s.frame_labels))
    if not ref_ids:
        logger.warning("no normal reference split given; nn_distance used all other videos")
    return out


def run_anomaly_pipeline(sequences, cfg=None, reference_ids=None):
    """Score every frame, then report AP and oracle F1 against the frame
    labels. Returns ``(MetricsReport, scored_sequences)``."""
    cfg = (cfg or AnomalyConfig()).validate()
    scored = score_sequences(sequences, cfg, reference_ids)
    scores = np.concatenate([s.scores for s in scored])
    labels = np.concatenate([s.labels for s in scored])
    groups = np.concatenate([[s.video_id] * len(s) for s in scored])
    report = metrics_from_scores(scores, None, labels, groups, k=cfg.k_score, eps=0.0)
    for s in scored:
        if s.labels.any():
            report.per_video[s.video_id]["ap"] = average_precision(s.scores, s.labels)
    report.extra = {"feature_kind": cfg.feature_kind, "scorer": cfg.scorer, "cycle_window": cfg.cycle_window}
    return report, scored


def write_score_trace(path, scored):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video_id", "frame", "score", "label"])
        for s in scored:
            labels = s.labels if s.labels is not None else [""] * len(s)
            for i, (v, lab) in enumerate(zip(s.scores, labels)):
                w.writerow([s.video_id, i, repr(float(v)), int(lab) if lab != "" else ""])
