"""Neighborhood-frozen LOF: region keys, fixed-structure scoring, gradients, maps.

Space factors into regions on which the query-mode LOF has a single closed
form: a region is the set of locations sharing one neighborhood key (the
query's k nearest points plus each of those points' own neighbor lists). Pin
the key and the score becomes smooth almost everywhere, which is what the
constrained optimizer needs; it agrees with the true query score exactly while
the key is the true key.
"""

from __future__ import annotations

import logging
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ._validation import as_point
from .lof import ExactLOF, _row_distances

logger = logging.getLogger(__name__)

# finite-difference step scale for the numeric gradient fallback
_FD_STEP = 1e-6
# |k-distance - distance| below this counts as sitting on a kink
KINK_TOL = 1e-6


class CoincidentPointError(ValueError):
    """Gradient requested at a location coinciding with a key point."""


class NeighborhoodKey:
    """Identity of a region: the query's neighbors and their neighbors.

    Lists are kept in (distance, index) order for reporting; equality and
    hashing are set-based, so two keys listing the same memberships in any
    order are the same key.
    """

    __slots__ = ("query_neighbors", "neighbor_neighbors", "_qn_set", "_canon",
                 "_hash")

    def __init__(self, query_neighbors: Sequence[int],
                 neighbor_neighbors: Mapping[int, Sequence[int]]):
        qn = tuple(int(i) for i in query_neighbors)
        nn = {int(j): tuple(int(v) for v in vals)
              for j, vals in neighbor_neighbors.items()}
        if set(nn) != set(qn):
            raise ValueError("neighbor_neighbors must cover exactly the query neighbors")
        self.query_neighbors = qn
        self.neighbor_neighbors = nn
        self._qn_set = frozenset(qn)
        self._canon = frozenset((j, frozenset(v)) for j, v in nn.items())
        self._hash = hash((self._qn_set, self._canon))

    def __eq__(self, other):
        if not isinstance(other, NeighborhoodKey):
            return NotImplemented
        return self._qn_set == other._qn_set and self._canon == other._canon

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"NeighborhoodKey(query_neighbors={self.query_neighbors})"

    def to_jsonable(self) -> dict:
        return {
            "query_neighbors": list(self.query_neighbors),
            "neighbor_neighbors": {
                str(j): list(self.neighbor_neighbors[j])
                for j in sorted(self.neighbor_neighbors)
            },
        }


def key_of(model: ExactLOF, x, exclude: Optional[int] = None) -> NeighborhoodKey:
    """Neighborhood key at location ``x`` (optionally with a point excluded).

    The excluded index appears nowhere in the key.
    """
    x = as_point(x, model.n_features_in_)
    view = model._view(exclude)
    ids, _ = view.neighbors_of_point(x)
    nn = {int(j): tuple(int(v) for v in view.knn_of(j)) for j in ids}
    return NeighborhoodKey(tuple(int(i) for i in ids), nn)


class FrozenRegion:
    """LOF with the neighborhood structure pinned to one key.

    ``score`` matches the model's query score wherever the key is the true
    key, and continues smoothly outside. The neighbors' own local densities
    do not depend on the query location, so they are cached as constants.
    """

    def __init__(self, model: ExactLOF, key: NeighborhoodKey,
                 exclude: Optional[int] = None):
        view = model._view(exclude)
        ids = np.asarray(key.query_neighbors, dtype=np.intp)
        self.key = key
        self.exclude = exclude
        self._k = model.k
        self._points = model.X_[ids]
        self._kdist = np.asarray(view.kdist_of(ids), dtype=np.float64)
        self._lrd_total = float(np.sum(view.lrd_of(ids)))
        self._clamp = model._clamp_rd

    def score(self, x) -> float:
        d = _row_distances(self._points, np.asarray(x, dtype=np.float64))
        rd = self._clamp(np.maximum(self._kdist, d))
        return float(self._lrd_total * rd.sum() / (self._k ** 2))

    def gradient(self, x, method: str = "analytic") -> np.ndarray:
        """Gradient of :meth:`score` at ``x``.

        On the measure-zero kinks where a distance equals a neighbor's
        k-distance, the one-sided branch following the distance term is
        returned. Raises :class:`CoincidentPointError` when ``x`` sits exactly
        on a key point.
        """
        x = np.asarray(x, dtype=np.float64)
        if method == "numeric":
            return self._numeric_gradient(x)
        if method != "analytic":
            raise ValueError(f"unknown gradient method {method!r}")
        diff = x - self._points
        d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        if np.any(d == 0.0):
            raise CoincidentPointError(
                "gradient undefined: location coincides with a key point"
            )
        active = d >= self._kdist
        g = (diff[active] / d[active, None]).sum(axis=0)
        return (self._lrd_total / self._k ** 2) * g

    def _numeric_gradient(self, x: np.ndarray) -> np.ndarray:
        h = _FD_STEP * np.maximum(1.0, np.abs(x))
        g = np.empty_like(x)
        for i in range(x.shape[0]):
            step = np.zeros_like(x)
            step[i] = h[i]
            g[i] = (self.score(x + step) - self.score(x - step)) / (2 * h[i])
        return g

    def kink_margin(self, x) -> float:
        """Smallest |distance - k-distance| over the key points (0 on a kink)."""
        d = _row_distances(self._points, np.asarray(x, dtype=np.float64))
        return float(np.min(np.abs(d - self._kdist)))

    def is_kink_free(self, x, tol: float = KINK_TOL) -> bool:
        return self.kink_margin(x) > tol


def region_score(model: ExactLOF, key: NeighborhoodKey, x,
                 exclude: Optional[int] = None) -> float:
    """One-shot frozen-structure score (see :class:`FrozenRegion`)."""
    return FrozenRegion(model, key, exclude).score(
        as_point(x, model.n_features_in_))


def region_score_gradient(model: ExactLOF, key: NeighborhoodKey, x,
                          exclude: Optional[int] = None,
                          method: str = "analytic") -> np.ndarray:
    """One-shot frozen-structure gradient (see :class:`FrozenRegion`)."""
    return FrozenRegion(model, key, exclude).gradient(
        as_point(x, model.n_features_in_), method=method)


def region_map_grid(model: ExactLOF, bbox, resolution: int,
                    exclude: Optional[int] = None
                    ) -> Tuple[np.ndarray, List[NeighborhoodKey]]:
    """Label a 2-D grid of cell centers with dense region ids.

    ``bbox`` is (min0, min1, max0, max1); ``resolution`` is the cell count per
    axis. Row r indexes coordinate 0, column c coordinate 1. Two cells share
    an id exactly when their centers share a neighborhood key; ids are dense
    in row-major first-seen order. Returns (id grid, key per id).
    """
    if model.n_features_in_ != 2:
        raise ValueError("region maps are only defined for 2-D data")
    if resolution < 1:
        raise ValueError("resolution must be at least 1")
    lo0, lo1, hi0, hi1 = (float(v) for v in bbox)
    if not (hi0 > lo0 and hi1 > lo1):
        raise ValueError("bbox must satisfy max > min on both axes")
    c0 = lo0 + (np.arange(resolution) + 0.5) * (hi0 - lo0) / resolution
    c1 = lo1 + (np.arange(resolution) + 0.5) * (hi1 - lo1) / resolution
    grid = np.empty((resolution, resolution), dtype=np.int32)
    table: Dict[NeighborhoodKey, int] = {}
    keys: List[NeighborhoodKey] = []
    for r in range(resolution):
        for c in range(resolution):
            key = key_of(model, np.array([c0[r], c1[c]]), exclude=exclude)
            rid = table.get(key)
            if rid is None:
                rid = len(keys)
                table[key] = rid
                keys.append(key)
            grid[r, c] = rid
    logger.debug("region map: %d cells, %d distinct regions",
                 resolution * resolution, len(keys))
    return grid, keys
