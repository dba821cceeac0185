"""Temporal self-similarity matrices and the diagnostics built on them."""

import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError
from .head import l2_normalize
from .validation import check_embeddings

logger = logging.getLogger(__name__)

UNIT_TOL = 1e-5


@dataclass(eq=False)
class SimilarityMatrix:
    values: np.ndarray
    frame_offset: int = 0
    renormalized: bool = False

    def __len__(self):
        return len(self.values)


def _unit_rows(emb):
    emb = check_embeddings(emb)
    norms = np.linalg.norm(emb, axis=1)
    if np.all(np.abs(norms - 1.0) <= UNIT_TOL):
        return emb, False
    unit, _ = l2_normalize(emb)
    return unit, True


def compute_tsm(embeddings, frame_offset=0):
    """Cosine self-similarity of a (T, D) embedding array.

    Rows that are not unit norm are normalized first and the result is
    flagged with ``renormalized=True``.
    """
    unit, renorm = _unit_rows(embeddings)
    if renorm:
        logger.debug("compute_tsm: inputs were not unit norm; normalized first")
    S = unit @ unit.T
    # exact symmetry regardless of BLAS summation order
    S = 0.5 * (S + S.T)
    return SimilarityMatrix(values=S, frame_offset=frame_offset, renormalized=renorm)


def autocorrelation(embeddings, max_lag):
    """r(lag) = mean_t e_t . e_{t+lag} for lag = 0..max_lag."""
    emb = check_embeddings(embeddings)
    n = len(emb)
    if not 0 <= max_lag < n:
        raise ConfigError(f"max_lag must lie in [0, {n - 1}], got {max_lag}")
    return np.array([np.mean(np.einsum("ij,ij->i", emb[:n - lag], emb[lag:])) for lag in range(max_lag + 1)])


def autocorrelation_from_tsm(S, max_lag):
    """Same quantity as :func:`autocorrelation`, read off the TSM superdiagonals."""
    values = S.values if isinstance(S, SimilarityMatrix) else np.asarray(S)
    n = len(values)
    if not 0 <= max_lag < n:
        raise ConfigError(f"max_lag must lie in [0, {n - 1}], got {max_lag}")
    return np.array([np.diagonal(values, offset=lag).mean() for lag in range(max_lag + 1)])


def dominant_lag(r, period):
    """Argmax of r over lags in [period/2, 3*period/2]; ties go to the smaller lag."""
    lo = int(np.ceil(period / 2))
    hi = min(int(np.floor(3 * period / 2)), len(r) - 1)
    if lo > hi:
        raise ConfigError("autocorrelation too short for the requested period window")
    return lo + int(np.argmax(r[lo:hi + 1]))


def _sign_fix(v):
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    if len(nz) and v[nz[0]] < 0:
        return -v
    return v


def top_eigenvector(cov, max_iter=200, tol=1e-10, squarings=4, seed=0):
    """Leading eigenpair of a symmetric PSD matrix by power iteration.

    The iteration runs on ``cov ** (2 ** squarings)`` (repeated squaring with
    rescaling), which shrinks the spectral ratio without changing the
    eigenvectors. Stops after ``max_iter`` steps or when both the Rayleigh
    quotient and the vector change by less than ``tol`` (relative).
    """
    d = cov.shape[0]
    scale = np.abs(cov).max()
    if scale == 0.0:
        return 0.0, np.zeros(d)
    A = cov / scale
    for _ in range(squarings):
        A = A @ A
        A /= np.abs(A).max()
    rng = np.random.default_rng(seed)
    v = rng.normal(size=d)
    v /= np.linalg.norm(v)
    lam = v @ cov @ v
    for _ in range(max_iter):
        w = A @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            break
        w /= norm
        new_lam = w @ cov @ w
        converged = abs(new_lam - lam) <= tol * abs(new_lam) and np.linalg.norm(w - v) <= tol
        v, lam = w, new_lam
        if converged:
            break
    return float(lam), _sign_fix(v)


def pca_project_1d(embeddings, seed=0):
    """Project centered embeddings on their first principal component.

    Returns ``(projection, degenerate)``; identical inputs give an all-zero
    projection with ``degenerate=True``.
    """
    X = check_embeddings(embeddings, min_rows=2)
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (len(X) - 1)
    lam, v = top_eigenvector(cov, seed=seed)
    if lam <= 0.0 or not np.any(v):
        return np.zeros(len(X)), True
    return Xc @ v, False


@dataclass(eq=False)
class CycleFeature:
    row: np.ndarray
    center_frame: int


def cycle_feature_matrix(embeddings, window=64):
    """(N, W) array; row i holds similarities of frame i to the frames of its
    non-overlapping W-block. The last partial block is padded with the final
    frame."""
    if window < 2:
        raise ConfigError(f"cycle window must be >= 2, got {window}")
    unit, _ = _unit_rows(embeddings)
    n = len(unit)
    if n < window:
        raise ConfigError(f"sequence of {n} frames is shorter than the cycle window {window}")
    out = np.empty((n, window))
    for start in range(0, n, window):
        idx = np.minimum(np.arange(start, start + window), n - 1)
        stop = min(start + window, n)
        out[start:stop] = unit[start:stop] @ unit[idx].T
    return out


def cycle_features(embeddings, window=64):
    rows = cycle_feature_matrix(embeddings, window)
    return [CycleFeature(row=r, center_frame=i) for i, r in enumerate(rows)]

