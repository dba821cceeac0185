"""Exact Euclidean nearest-neighbour search.

Candidates are found with the fast ``|q|^2 + |r|^2 - 2 q.r`` expansion and
then re-ranked with directly computed distances, so results (including the
lower-index tie rule) match a plain full-sort scan.
"""

import numpy as np

from .exceptions import EmptyInputError


def _chunks(n, size):
    for start in range(0, n, size):
        yield start, min(n, start + size)


def _approx_sq(Q, R, r_sq):
    d = (Q ** 2).sum(axis=1)[:, None] + r_sq[None, :] - 2.0 * (Q @ R.T)
    return np.maximum(d, 0.0)


def kneighbors(Q, R, k, q_groups=None, r_groups=None, exclude_self=False, with_ties=False, chunk=256):
    """Nearest rows of ``R`` for every row of ``Q``.

    Rows of ``R`` whose group equals the query's group are ignored; with
    ``exclude_self`` (``Q`` is ``R``) the query's own row is ignored. Returns
    a list of ``(indices, distances)`` pairs sorted by (distance, index).
    Without ``with_ties`` each pair has exactly ``k`` entries; with it, every
    row at distance <= the k-th distance is included.
    """
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    if len(R) == 0:
        raise EmptyInputError("reference set is empty")
    r_sq = (R ** 2).sum(axis=1)
    r_max = r_sq.max()
    out = []
    for lo, hi in _chunks(len(Q), chunk):
        d = _approx_sq(Q[lo:hi], R, r_sq)
        if q_groups is not None:
            d[np.asarray(q_groups)[lo:hi, None] == np.asarray(r_groups)[None, :]] = np.inf
        if exclude_self:
            rows = np.arange(hi - lo)
            d[rows, rows + lo] = np.inf
        valid = np.isfinite(d).sum(axis=1)
        if np.any(valid < k):
            raise EmptyInputError(f"fewer than k={k} admissible reference rows for some query")
        kth = np.partition(d, k - 1, axis=1)[:, k - 1]
        slack = 1e-7 * (1.0 + (Q[lo:hi] ** 2).sum(axis=1) + r_max)
        for i in range(hi - lo):
            cand = np.flatnonzero(d[i] <= kth[i] + slack[i])
            exact = np.sqrt(((R[cand] - Q[lo + i]) ** 2).sum(axis=1))
            order = np.lexsort((cand, exact))
            cand, exact = cand[order], exact[order]
            if with_ties:
                keep = exact <= exact[k - 1]
                out.append((cand[keep], exact[keep]))
            else:
                out.append((cand[:k], exact[:k]))
    return out
