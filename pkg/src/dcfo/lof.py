"""Exact local outlier factor scoring with query-point and relocation support.

The model scores hypothetical locations against the fitted data: a query point
never enters any neighbor list, and one dataset point can be excluded from all
neighborhood computations (the natural setting when asking where an existing
point would have to move). Relocation scoring rebuilds the model with the point
actually moved, which is a different, stricter audit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_point, as_points_matrix, check_index, check_k

logger = logging.getLogger(__name__)

# reachability clamp under the "epsilon" duplicate policy
RD_FLOOR = 1e-12
# brute-force neighbor search below this many points, KD-tree above
BRUTE_FORCE_MAX = 4096
# extra neighbors fetched so distance ties can be settled by index
_TIE_WINDOW = 16
# cache the full pairwise distance matrix up to this many points
_DIST_CACHE_MAX = 2048
# row-chunk size for matrix-free neighbor list construction
_CHUNK = 256


class DuplicatePointError(ValueError):
    """Raised under duplicate_policy="reject" when a k-distance collapses to zero."""


def _row_distances(X: np.ndarray, x: np.ndarray) -> np.ndarray:
    d = X - x
    return np.sqrt(np.einsum("ij,ij->i", d, d))


def _smallest_k(dist: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k smallest entries, ordered by (distance, index).

    +inf entries mark excluded candidates. A stable sort on an index-ordered
    array yields exactly the (distance, index) lexicographic order.
    """
    n = dist.shape[0]
    w = k + _TIE_WINDOW
    if n <= 64 or w >= n:
        return np.argsort(dist, kind="stable")[:k]
    cand = np.argpartition(dist, w - 1)[:w]
    cand.sort()
    order = cand[np.argsort(dist[cand], kind="stable")]
    # ties straddling the window boundary: settle with a full scan
    if dist[order[k - 1]] >= dist[order[-1]]:
        return np.argsort(dist, kind="stable")[:k]
    return order[:k]


def _knn_from_matrix(D: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Row-wise k nearest neighbors of a distance matrix (inf marks exclusions).

    Returns (indices (n, k) ordered by (distance, index), distances (n, k)).
    """
    n = D.shape[0]
    w = k + _TIE_WINDOW
    if n <= 128 or w >= n:
        idx = np.argsort(D, axis=1, kind="stable")[:, :k]
        return idx, np.take_along_axis(D, idx, axis=1)
    cand = np.argpartition(D, w - 1, axis=1)[:, :w]
    cand.sort(axis=1)
    cd = np.take_along_axis(D, cand, axis=1)
    order = np.argsort(cd, axis=1, kind="stable")
    sidx = np.take_along_axis(cand, order, axis=1)
    sd = np.take_along_axis(cd, order, axis=1)
    idx = sidx[:, :k].copy()
    dist = sd[:, :k].copy()
    ambiguous = np.flatnonzero(sd[:, k - 1] >= sd[:, -1])
    for r in ambiguous:
        top = np.argsort(D[r], kind="stable")[:k]
        idx[r] = top
        dist[r] = D[r, top]
    return idx, dist


class _ModelView:
    """Neighborhood structures over the data with one point optionally removed.

    All public ids are original-dataset indices; internal arrays live in the
    compacted sub-index space.
    """

    def __init__(self, model: "ExactLOF", exclude: Optional[int]):
        self.exclude = exclude
        self._model = model
        n = model.n_samples_
        if exclude is None:
            self._keep = None
            self._pos = None
            self._X = model.X_
            self._knn = model.knn_indices_
            self.kdist = model.k_distances_
            self.lrd = model.lrd_
            return
        keep = np.delete(np.arange(n), exclude)
        self._keep = keep
        pos = np.full(n, -1, dtype=np.intp)
        pos[keep] = np.arange(n - 1)
        self._pos = pos
        self._X = model.X_[keep]
        knn_sub, nbr_dist = self._build_lists(model, keep, exclude)
        k = model.k
        kdist = nbr_dist[:, k - 1].copy()
        if model.duplicate_policy == "reject" and np.any(kdist <= 0.0):
            raise DuplicatePointError(
                "zero k-distance in exclusion-adjusted structures"
            )
        rd = model._clamp_rd(np.maximum(kdist[knn_sub], nbr_dist))
        self.kdist = kdist
        self.lrd = k / rd.sum(axis=1)
        self._knn = keep[knn_sub]

    def _build_lists(self, model, keep, exclude):
        k = model.k
        m = keep.shape[0]
        if m < k + 1:
            raise ValueError(
                f"cannot exclude a point: only {m} remain for k={k}"
            )
        if model._D is not None:
            D = model._D[np.ix_(keep, keep)].copy()
            np.fill_diagonal(D, np.inf)
            return _knn_from_matrix(D, k)
        if model._tree is not None:
            return self._build_lists_tree(model, keep, exclude)
        # matrix-free: chunked rows against the kept points
        idx = np.empty((m, k), dtype=np.intp)
        dist = np.empty((m, k), dtype=np.float64)
        Xk = model.X_[keep]
        for lo in range(0, m, _CHUNK):
            hi = min(lo + _CHUNK, m)
            D = cdist(Xk[lo:hi], Xk)
            D[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
            idx[lo:hi], dist[lo:hi] = _knn_from_matrix(D, k)
        return idx, dist

    def _build_lists_tree(self, model, keep, exclude):
        k = model.k
        m = keep.shape[0]
        Xk = model.X_[keep]
        w = min(k + _TIE_WINDOW + 2, model.n_samples_)
        qd, qi = model._tree.query(Xk, k=w)
        idx = np.empty((m, k), dtype=np.intp)
        dist = np.empty((m, k), dtype=np.float64)
        for r in range(m):
            own = keep[r]
            mask = (qi[r] != own) & (qi[r] != exclude)
            cand = qi[r][mask]
            order = np.argsort(cand, kind="stable")
            cand = cand[order]
            cd = _row_distances(model.X_[cand], Xk[r])
            o2 = np.argsort(cd, kind="stable")
            cand, cd = cand[o2], cd[o2]
            if cand.shape[0] < k or cd[k - 1] >= qd[r, -1]:
                full = _row_distances(Xk, Xk[r])
                full[r] = np.inf
                sub = _smallest_k(full, k)
                idx[r], dist[r] = sub, full[sub]
            else:
                sel = cand[:k]
                idx[r] = sel if self._pos is None else self._pos[sel]
                dist[r] = cd[:k]
        return idx, dist

    # -- queries ---------------------------------------------------------

    def neighbors_of_point(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """k nearest dataset points to an arbitrary location ``x``.

        Returns (original ids ordered by (distance, index), distances).
        """
        model = self._model
        k = model.k
        if model._tree is not None:
            ids, dist = self._query_tree(x, k)
        else:
            d = _row_distances(self._X, x)
            sub = _smallest_k(d, k)
            dist = d[sub]
            ids = sub if self._keep is None else self._keep[sub]
        return ids, dist

    def _query_tree(self, x, k):
        model = self._model
        extra = 1 if self.exclude is not None else 0
        w = min(k + _TIE_WINDOW + extra, model.n_samples_)
        qd, qi = model._tree.query(x, k=w)
        qi = np.atleast_1d(qi)
        qd = np.atleast_1d(qd)
        if self.exclude is not None:
            mask = qi != self.exclude
            qi = qi[mask]
            qd = qd[mask]
        order = np.argsort(qi, kind="stable")
        cand = qi[order]
        cd = _row_distances(model.X_[cand], x)
        o2 = np.argsort(cd, kind="stable")
        cand, cd = cand[o2], cd[o2]
        if cand.shape[0] < k or (w < model.n_samples_ and cd[k - 1] >= qd[-1]):
            d = _row_distances(self._X, x)
            sub = _smallest_k(d, k)
            dist = d[sub]
            ids = sub if self._keep is None else self._keep[sub]
            return ids, dist
        return cand[:k], cd[:k]

    def knn_of(self, j: int) -> np.ndarray:
        """Neighbor list (original ids) of original point ``j``."""
        r = j if self._pos is None else self._pos[j]
        return self._knn[r]

    def kdist_of(self, ids) -> np.ndarray:
        r = ids if self._pos is None else self._pos[ids]
        return self.kdist[r]

    def lrd_of(self, ids) -> np.ndarray:
        r = ids if self._pos is None else self._pos[ids]
        return self.lrd[r]


class ExactLOF(BaseEstimator):
    """Local outlier factor with exact, deterministic neighbor handling.

    Parameters
    ----------
    k : number of neighbors.
    duplicate_policy : "epsilon" clamps reachability distances below 1e-12 up
        to 1e-12 so duplicate rows stay finite; "reject" raises on a zero
        k-distance.
    neighbor_algorithm : "auto" picks brute force below 4096 points and a
        KD-tree above; "brute"/"kd_tree" force one path.

    Fitted attributes: ``X_``, ``knn_indices_`` (ordered by distance then
    index), ``k_distances_``, ``lrd_``, ``lof_scores_``.
    """

    def __init__(self, k: int = 10, duplicate_policy: str = "epsilon",
                 neighbor_algorithm: str = "auto"):
        self.k = k
        self.duplicate_policy = duplicate_policy
        self.neighbor_algorithm = neighbor_algorithm

    def _clamp_rd(self, rd: np.ndarray) -> np.ndarray:
        if self.duplicate_policy == "epsilon":
            return np.maximum(rd, RD_FLOOR)
        return rd

    def fit(self, X, y=None) -> "ExactLOF":
        k = check_k(self.k)
        if self.duplicate_policy not in ("epsilon", "reject"):
            raise ValueError(f"unknown duplicate_policy {self.duplicate_policy!r}")
        if self.neighbor_algorithm not in ("auto", "brute", "kd_tree"):
            raise ValueError(
                f"unknown neighbor_algorithm {self.neighbor_algorithm!r}"
            )
        X = as_points_matrix(X, copy=True)
        n, dim = X.shape
        if n < k + 2:
            raise ValueError(f"need at least k+2={k + 2} points, got {n}")
        X.setflags(write=False)
        self.X_ = X
        self.n_samples_ = n
        self.n_features_in_ = dim

        algo = self.neighbor_algorithm
        if algo == "auto":
            algo = "brute" if n <= BRUTE_FORCE_MAX else "kd_tree"
        self._tree = cKDTree(X) if algo == "kd_tree" else None
        self._D = None

        if self._tree is not None:
            view_like = _ModelView.__new__(_ModelView)
            view_like._model = self
            view_like._pos = None
            view_like._keep = None
            knn, nbr_dist = view_like._build_lists_tree(self, np.arange(n), -1)
        elif n <= _DIST_CACHE_MAX:
            D = cdist(X, X)
            self._D = D
            Dq = D.copy()
            np.fill_diagonal(Dq, np.inf)
            knn, nbr_dist = _knn_from_matrix(Dq, k)
        else:
            knn = np.empty((n, k), dtype=np.intp)
            nbr_dist = np.empty((n, k), dtype=np.float64)
            for lo in range(0, n, _CHUNK):
                hi = min(lo + _CHUNK, n)
                D = cdist(X[lo:hi], X)
                D[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
                knn[lo:hi], nbr_dist[lo:hi] = _knn_from_matrix(D, k)

        kdist = nbr_dist[:, k - 1].copy()
        if self.duplicate_policy == "reject" and np.any(kdist <= 0.0):
            raise DuplicatePointError(
                "duplicate rows collapse a k-distance to zero "
                "(duplicate_policy='reject')"
            )
        rd = self._clamp_rd(np.maximum(kdist[knn], nbr_dist))
        lrd = k / rd.sum(axis=1)

        self.knn_indices_ = knn
        self.k_distances_ = kdist
        self.lrd_ = lrd
        self.lof_scores_ = lrd[knn].sum(axis=1) / (k * lrd)
        self._views: dict = {}
        logger.debug("fit: n=%d dim=%d k=%d algo=%s", n, dim, k, algo)
        return self

    # -- views -----------------------------------------------------------

    def _view(self, exclude: Optional[int]) -> _ModelView:
        check_is_fitted(self, "lof_scores_")
        if exclude is None:
            key = -1
        else:
            key = check_index(exclude, self.n_samples_, name="exclude")
        view = self._views.get(key)
        if view is None:
            # idempotent under concurrent fill: recomputation is identical
            view = _ModelView(self, None if key < 0 else key)
            self._views[key] = view
        return view

    # -- scoring ---------------------------------------------------------

    def kneighbors_point(self, x, exclude: Optional[int] = None):
        """k nearest dataset points to location ``x`` (ids, distances)."""
        check_is_fitted(self, "lof_scores_")
        x = as_point(x, self.n_features_in_)
        return self._view(exclude).neighbors_of_point(x)

    def score_point(self, x, exclude: Optional[int] = None) -> float:
        """LOF of a hypothetical location ``x``.

        ``x`` is treated as a new point: it never appears in any neighbor
        list. With ``exclude`` set, that dataset point is removed from every
        neighborhood computation first.
        """
        check_is_fitted(self, "lof_scores_")
        x = as_point(x, self.n_features_in_)
        view = self._view(exclude)
        ids, dist = view.neighbors_of_point(x)
        rd = self._clamp_rd(np.maximum(view.kdist_of(ids), dist))
        lrd_x = self.k / rd.sum()
        return float(view.lrd_of(ids).sum() / (self.k * lrd_x))

    def score_samples(self, X) -> np.ndarray:
        """Query-mode LOF for each row of ``X`` (no exclusion)."""
        X = as_points_matrix(X, copy=False)
        return np.array([self.score_point(row) for row in X])

    def score_relocated(self, i: int, x) -> float:
        """LOF point ``i`` would have after actually moving to ``x``."""
        check_is_fitted(self, "lof_scores_")
        return relocated_score(self.X_, self.k, i, x,
                               duplicate_policy=self.duplicate_policy)


def relocated_score(X, k: int, i: int, x, duplicate_policy: str = "epsilon") -> float:
    """LOF of point ``i`` after rebuilding the model with row ``i`` moved to ``x``.

    Unlike query scoring, the moved point participates in every neighbor list,
    so superimposing it on another point inflates local densities around the
    pair. Moving a point onto itself reproduces its original score.
    """
    X = as_points_matrix(X, copy=True)
    i = check_index(i, X.shape[0], name="i")
    X[i] = as_point(x, X.shape[1])
    sub = ExactLOF(k=k, duplicate_policy=duplicate_policy).fit(X)
    return float(sub.lof_scores_[i])


@dataclass(frozen=True)
class ThresholdPolicy:
    """How to turn a score vector into a single outlier threshold."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ("fixed", "quantile"):
            raise ValueError(f"unknown threshold kind {self.kind!r}")
        v = float(self.value)
        if not np.isfinite(v):
            raise ValueError("threshold value must be finite")
        if self.kind == "quantile" and not 0.0 <= v <= 1.0:
            raise ValueError(f"quantile must lie in [0, 1], got {v}")
        object.__setattr__(self, "value", v)

    @classmethod
    def fixed(cls, value: float) -> "ThresholdPolicy":
        return cls("fixed", value)

    @classmethod
    def quantile(cls, q: float) -> "ThresholdPolicy":
        return cls("quantile", q)

    @classmethod
    def parse(cls, text: str) -> Optional["ThresholdPolicy"]:
        """Parse "fixed:<v>", "quantile:<q>" or "auto" (-> None)."""
        text = text.strip()
        if text == "auto":
            return None
        kind, sep, val = text.partition(":")
        if not sep or kind not in ("fixed", "quantile"):
            raise ValueError(
                f"bad threshold spec {text!r}; expected fixed:<v>, "
                "quantile:<q> or auto"
            )
        try:
            return cls(kind, float(val))
        except ValueError as exc:
            raise ValueError(f"bad threshold spec {text!r}: {exc}") from None

    def spec(self) -> str:
        return f"{self.kind}:{format(self.value, '.17g')}"


def select_threshold(scores, policy: ThresholdPolicy) -> float:
    """Resolve a threshold policy against a score vector.

    Quantiles use linear interpolation between order statistics.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError("scores must be a non-empty 1-D vector")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores contain non-finite values")
    if policy.kind == "fixed":
        return float(policy.value)
    return float(np.quantile(scores, policy.value))
