"""Brute-force references for k-NN voting, AP, oracle F1 and LOF."""

import numpy as np


def ref_knn(X, y, groups, k, eps):
    """Full sort of every other-video row by (distance, index)."""
    labels, scores, used = [], [], []
    for i in range(len(X)):
        cand = [j for j in range(len(X)) if groups[j] != groups[i]]
        d = {j: float(np.sqrt(((X[i] - X[j]) ** 2).sum())) for j in cand}
        nbrs = sorted(cand, key=lambda j: (d[j], j))[:k]
        w_p = sum(1.0 / (d[j] ** 2 + eps) for j in nbrs if y[j] == 0)
        w_n = sum(1.0 / (d[j] ** 2 + eps) for j in nbrs if y[j] == 1)
        labels.append(1 if w_n > w_p else 0)
        scores.append(w_n / (w_p + w_n))
        used.append(nbrs)
    return np.array(labels), np.array(scores), used


def ref_ap(scores, labels):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits, total, precisions = 0, 0, []
    for i in order:
        total += 1
        if labels[i] == 1:
            hits += 1
            precisions.append(hits / total)
    return sum(precisions) / len(precisions)


def ref_f1(pred, labels):
    tp = sum(1 for p, l in zip(pred, labels) if p == 1 and l == 1)
    fp = sum(1 for p, l in zip(pred, labels) if p == 1 and l == 0)
    fn = sum(1 for p, l in zip(pred, labels) if p == 0 and l == 1)
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    return 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)


def ref_oracle_f1(scores, labels):
    distinct = sorted(set(scores))
    thresholds = [-np.inf] + [(a + b) / 2 for a, b in zip(distinct, distinct[1:])] + [np.inf]
    thresholds += distinct
    return max(ref_f1([1 if s >= t else 0 for s in scores], labels) for t in thresholds)


def ref_lof(X, k, floor=1e-12):
    n = len(X)
    D = np.array([[np.sqrt(((X[i] - X[j]) ** 2).sum()) for j in range(n)] for i in range(n)])
    kdist, hood = [], []
    for i in range(n):
        others = sorted((D[i, j], j) for j in range(n) if j != i)
        kd = others[k - 1][0]
        kdist.append(kd)
        hood.append([j for d, j in others if d <= kd])
    lrd = []
    for i in range(n):
        reach = [max(kdist[j], D[i, j]) for j in hood[i]]
        lrd.append(1.0 / max(sum(reach) / len(reach), floor))
    return np.array([sum(lrd[j] for j in hood[i]) / len(hood[i]) / lrd[i] for i in range(n)])
