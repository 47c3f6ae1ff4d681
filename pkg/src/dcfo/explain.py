"""Counterfactual search for LOF outliers.

The main search hops between neighborhood regions: optimize inside the
current region's frozen score, and if the solution lands in a different
region, restart there; locations the optimizer visited outside already-tried
regions wait in a FIFO exploration queue as fallback starts. A search ends
when some region's solution stays put (found), when the queue runs dry
(exhausted), or when the region budget is spent (limit).

Also here: the one-shot ablation that never re-freezes (full_opt), the
nearest-inlier baseline, outlier detection with the two-step threshold rule,
and the sklearn-style estimator wrapping it all.
"""

from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_index, check_mask
from .lof import (ExactLOF, ThresholdPolicy, _row_distances, relocated_score,
                  select_threshold)
from .optimize import OptProblem, constraint_with_margin, minimize_in_region
from .regions import NeighborhoodKey, key_of

logger = logging.getLogger(__name__)

# two-step rule: try this fixed threshold first ...
DEFAULT_FIXED_THRESHOLD = 1.5
# ... and fall back to this score quantile when nothing exceeds it
FALLBACK_QUANTILE = 0.95

_CANDIDATE_STATUSES = ("converged", "left_region_warning")


@dataclass
class ExplainConfig:
    """Knobs for one explanation run.

    ``threshold`` None means the automatic two-step rule. ``actionable_mask``
    True marks coordinates allowed to move (None: all). ``queue_limit`` caps
    how many regions one search may optimize. ``validity_mode`` "query" scores
    candidate locations as new points; "relocation" actually moves the point
    and rebuilds (a stricter audit used for baselines).
    """

    threshold: Optional[ThresholdPolicy] = None
    plausibility_target: Optional[float] = None
    actionable_mask: Optional[np.ndarray] = None
    queue_limit: int = 64
    constraint_tol: float = 1e-6
    grad_tol: float = 1e-6
    step_tol: float = 1e-9
    max_iterations: int = 200
    validity_mode: str = "query"
    gradient_method: str = "analytic"

    def __post_init__(self):
        if self.queue_limit < 1:
            raise ValueError("queue_limit must be at least 1")
        if self.validity_mode not in ("query", "relocation"):
            raise ValueError(f"unknown validity_mode {self.validity_mode!r}")


@dataclass
class CounterfactualResult:
    """One explanation outcome.

    ``status`` "found" guarantees the mode-appropriate score at ``location``
    is at most the effective threshold plus the constraint tolerance and that
    ``key`` is the location's true region key. For "exhausted"/"limit" the
    location is the last point the search reached, kept for inspection.
    """

    origin_index: int
    location: np.ndarray
    distance: float
    lof_value: float
    key: Optional[NeighborhoodKey]
    status: str
    regions_visited: int
    wall_time: float


def resolve_threshold(model: ExactLOF, policy: Optional[ThresholdPolicy] = None
                      ) -> float:
    """Resolve a threshold against the model's training scores.

    ``policy`` None applies the two-step rule: the fixed default first; if no
    score exceeds it, the fallback quantile of the scores. An explicit policy
    resolves strictly, with no fallback.
    """
    check_is_fitted(model, "lof_scores_")
    scores = model.lof_scores_
    if policy is None:
        t = DEFAULT_FIXED_THRESHOLD
        if not np.any(scores > t):
            t = select_threshold(scores, ThresholdPolicy.quantile(FALLBACK_QUANTILE))
            logger.info("two-step threshold: fell back to quantile -> %.6g", t)
        return float(t)
    return select_threshold(scores, policy)


def detect_outliers(model: ExactLOF, policy: Optional[ThresholdPolicy] = None
                    ) -> Tuple[float, np.ndarray]:
    """Resolved threshold and the indices scoring strictly above it."""
    t = resolve_threshold(model, policy)
    return t, np.flatnonzero(model.lof_scores_ > t)


class _SearchState:
    """Visited-region set plus the FIFO exploration queue, shared over a search."""

    def __init__(self):
        self.started: set = set()
        self.queue: deque = deque()
        self.queued_keys: set = set()
        self.regions_visited = 0

    def offer(self, point: np.ndarray, key: NeighborhoodKey) -> None:
        if key in self.started or key in self.queued_keys:
            return
        self.queued_keys.add(key)
        self.queue.append((point, key))

    def pop_next(self) -> Optional[np.ndarray]:
        # entries whose region was visited since being queued are stale
        while self.queue:
            point, key = self.queue.popleft()
            if key not in self.started:
                return point
        return None


def _run_from(model, index, start, t_eff, cfg, search, path_log=None):
    """Region-hopping loop from one start. Returns (status, location).

    status "found" already re-verified against the true query score.
    """
    origin = model.X_[index]
    start = np.asarray(start, dtype=np.float64).copy()
    last_loc = start
    while True:
        if search.regions_visited >= cfg.queue_limit:
            return "limit", last_loc
        key = key_of(model, start, exclude=index)
        if key in search.started:
            nxt = search.pop_next()
            if nxt is None:
                return "exhausted", last_loc
            start = nxt
            continue
        search.started.add(key)
        search.regions_visited += 1
        problem = OptProblem(
            origin=origin,
            key=key,
            threshold=t_eff,
            start=start,
            actionable_mask=cfg.actionable_mask,
            exclude=index,
            constraint_tol=cfg.constraint_tol,
            grad_tol=cfg.grad_tol,
            step_tol=cfg.step_tol,
            max_iterations=cfg.max_iterations,
            gradient_method=cfg.gradient_method,
        )
        res = minimize_in_region(problem, model)
        last_loc = res.solution
        if path_log is not None:
            path_log.append(res.solution.copy())
        for point in res.trace:
            k_pt = key_of(model, point, exclude=index)
            search.offer(point, k_pt)
        usable = res.status in _CANDIDATE_STATUSES or (
            res.status == "iteration_limit"
            and res.constraint_value <= t_eff + cfg.constraint_tol
        )
        if usable:
            sol_key = key_of(model, res.solution, exclude=index)
            if sol_key == key:
                true_score = model.score_point(res.solution, exclude=index)
                if true_score <= t_eff + cfg.constraint_tol:
                    return "found", res.solution
                logger.debug(
                    "in-region solution failed the query re-check "
                    "(%.12g > %.12g); continuing", true_score, t_eff,
                )
            elif sol_key not in search.started:
                start = res.solution
                continue
        nxt = search.pop_next()
        if nxt is None:
            return "exhausted", last_loc
        start = nxt


def _build_result(model, index, status, location, t_eff, cfg, regions, wall):
    location = np.asarray(location, dtype=np.float64)
    lof_val = _validity_score(model, index, location, cfg.validity_mode)
    return CounterfactualResult(
        origin_index=int(index),
        location=location,
        distance=float(np.linalg.norm(location - model.X_[index])),
        lof_value=lof_val,
        key=key_of(model, location, exclude=index),
        status=status,
        regions_visited=regions,
        wall_time=wall,
    )


def _validity_score(model, index, location, mode):
    if mode == "relocation":
        return relocated_score(model.X_, model.k, index, location,
                               duplicate_policy=model.duplicate_policy)
    return model.score_point(location, exclude=index)


def _require_outlier(model, index, t):
    score = float(model.lof_scores_[index])
    if score <= t:
        raise ValueError(
            f"point {index} is not an outlier: LOF {score:.6g} <= "
            f"threshold {t:.6g}")


def explain_one(model: ExactLOF, index: int,
                config: Optional[ExplainConfig] = None,
                path_log: Optional[list] = None) -> CounterfactualResult:
    """Closest admissible location for point ``index`` (see module docstring)."""
    cfg = config if config is not None else ExplainConfig()
    check_is_fitted(model, "lof_scores_")
    index = check_index(index, model.n_samples_)
    check_mask(cfg.actionable_mask, model.n_features_in_)
    t = resolve_threshold(model, cfg.threshold)
    _require_outlier(model, index, t)
    t_eff = constraint_with_margin(t, cfg.plausibility_target)
    search = _SearchState()
    t0 = time.perf_counter()
    status, loc = _run_from(model, index, model.X_[index], t_eff, cfg, search,
                            path_log=path_log)
    wall = time.perf_counter() - t0
    logger.info("explain_one(%d): %s after %d region(s), %.3fs",
                index, status, search.regions_visited, wall)
    return _build_result(model, index, status, loc, t_eff, cfg,
                         search.regions_visited, wall)


def explain_many(model: ExactLOF, index: int, n_counterfactuals: int,
                 config: Optional[ExplainConfig] = None
                 ) -> List[CounterfactualResult]:
    """Up to ``n_counterfactuals`` admissible locations with distinct region keys.

    The primary search runs exactly as :func:`explain_one`. Every region its
    trace touched but no counterfactual claimed then gets one secondary
    optimization, seeded from the queued trace point; a secondary's solution
    is accepted when its true region key is new among the accepted results
    and its true query score meets the ceiling, and each secondary's own
    trace extends the queue. Stops at ``n_counterfactuals`` accepted, when
    the queue runs dry, or when the shared region budget is spent.
    """
    if n_counterfactuals < 1:
        raise ValueError("n_counterfactuals must be at least 1")
    cfg = config if config is not None else ExplainConfig()
    check_is_fitted(model, "lof_scores_")
    index = check_index(index, model.n_samples_)
    check_mask(cfg.actionable_mask, model.n_features_in_)
    t = resolve_threshold(model, cfg.threshold)
    _require_outlier(model, index, t)
    t_eff = constraint_with_margin(t, cfg.plausibility_target)
    origin = model.X_[index]

    search = _SearchState()
    results: List[CounterfactualResult] = []
    taken_keys: List[NeighborhoodKey] = []

    def accept(location, segment_regions, wall):
        result = _build_result(model, index, "found", location, t_eff, cfg,
                               segment_regions, wall)
        taken_keys.append(result.key)
        results.append(result)
        # a region holding a counterfactual never gets re-optimized
        search.started.add(result.key)

    t0 = time.perf_counter()
    status, loc = _run_from(model, index, origin, t_eff, cfg, search)
    if status == "found":
        accept(loc, search.regions_visited, time.perf_counter() - t0)

    while len(results) < n_counterfactuals:
        if search.regions_visited >= cfg.queue_limit:
            break
        start = search.pop_next()
        if start is None:
            break
        key = key_of(model, start, exclude=index)
        if key in search.started:
            continue
        search.started.add(key)
        search.regions_visited += 1
        t0 = time.perf_counter()
        res = minimize_in_region(OptProblem(
            origin=origin,
            key=key,
            threshold=t_eff,
            start=start,
            actionable_mask=cfg.actionable_mask,
            exclude=index,
            constraint_tol=cfg.constraint_tol,
            grad_tol=cfg.grad_tol,
            step_tol=cfg.step_tol,
            max_iterations=cfg.max_iterations,
            gradient_method=cfg.gradient_method,
        ), model)
        wall = time.perf_counter() - t0
        for point in res.trace:
            search.offer(point, key_of(model, point, exclude=index))
        usable = res.status in _CANDIDATE_STATUSES or (
            res.status == "iteration_limit"
            and res.constraint_value <= t_eff + cfg.constraint_tol
        )
        if not usable:
            continue
        sol_key = key_of(model, res.solution, exclude=index)
        if sol_key in taken_keys:
            continue
        true_score = model.score_point(res.solution, exclude=index)
        if true_score <= t_eff + cfg.constraint_tol:
            accept(res.solution, 1, wall)

    logger.info("explain_many(%d): %d/%d found over %d region(s)",
                index, len(results), n_counterfactuals, search.regions_visited)
    return results


def explain_full_opt(model: ExactLOF, index: int,
                     config: Optional[ExplainConfig] = None
                     ) -> CounterfactualResult:
    """Single-shot ablation: the starting key stays frozen for the whole run.

    No region hopping, no exploration queue. The result is "found" only when
    the final point's true key still equals the frozen key and its true query
    score meets the ceiling; otherwise "exhausted". Kept as a foil showing why
    re-freezing matters.
    """
    cfg = config if config is not None else ExplainConfig()
    check_is_fitted(model, "lof_scores_")
    index = check_index(index, model.n_samples_)
    check_mask(cfg.actionable_mask, model.n_features_in_)
    t = resolve_threshold(model, cfg.threshold)
    _require_outlier(model, index, t)
    t_eff = constraint_with_margin(t, cfg.plausibility_target)
    origin = model.X_[index]
    t0 = time.perf_counter()
    frozen_key = key_of(model, origin, exclude=index)
    problem = OptProblem(
        origin=origin,
        key=frozen_key,
        threshold=t_eff,
        start=origin,
        actionable_mask=cfg.actionable_mask,
        exclude=index,
        constraint_tol=cfg.constraint_tol,
        grad_tol=cfg.grad_tol,
        step_tol=cfg.step_tol,
        max_iterations=cfg.max_iterations,
        gradient_method=cfg.gradient_method,
    )
    res = minimize_in_region(problem, model)
    wall = time.perf_counter() - t0
    true_key = key_of(model, res.solution, exclude=index)
    true_score = model.score_point(res.solution, exclude=index)
    ok = (res.status in _CANDIDATE_STATUSES
          and true_key == frozen_key
          and true_score <= t_eff + cfg.constraint_tol)
    status = "found" if ok else "exhausted"
    return CounterfactualResult(
        origin_index=index,
        location=res.solution,
        distance=float(np.linalg.norm(res.solution - origin)),
        lof_value=_validity_score(model, index, res.solution, cfg.validity_mode),
        key=true_key,
        status=status,
        regions_visited=1,
        wall_time=wall,
    )


def baseline_nearest_inlier(model: ExactLOF, index: int,
                            threshold: Optional[float] = None,
                            validity_mode: str = "query",
                            constraint_tol: float = 1e-6
                            ) -> CounterfactualResult:
    """Move the outlier onto its nearest inlier (score <= threshold).

    ``validity_mode`` "query" scores the landing spot as a new point;
    "relocation" rebuilds with the point actually moved, which can reveal the
    move as invalid: superimposing two points inflates densities around the
    pair and the pair's own score can end up above the threshold.
    """
    check_is_fitted(model, "lof_scores_")
    index = check_index(index, model.n_samples_)
    if validity_mode not in ("query", "relocation"):
        raise ValueError(f"unknown validity_mode {validity_mode!r}")
    t = float(threshold) if threshold is not None else resolve_threshold(model)
    t0 = time.perf_counter()
    scores = model.lof_scores_
    inliers = np.flatnonzero(scores <= t)
    inliers = inliers[inliers != index]
    if inliers.size == 0:
        raise ValueError("no inlier available to relocate onto")
    d = _row_distances(model.X_[inliers], model.X_[index])
    j = int(inliers[np.lexsort((inliers, d))[0]])
    location = model.X_[j].copy()
    lof_val = _validity_score(model, index, location, validity_mode)
    wall = time.perf_counter() - t0
    status = "found" if lof_val <= t + constraint_tol else "exhausted"
    return CounterfactualResult(
        origin_index=index,
        location=location,
        distance=float(np.linalg.norm(location - model.X_[index])),
        lof_value=float(lof_val),
        key=key_of(model, location, exclude=index),
        status=status,
        regions_visited=0,
        wall_time=wall,
    )


def _parse_threshold_param(threshold) -> Optional[ThresholdPolicy]:
    if threshold is None or threshold == "auto":
        return None
    if isinstance(threshold, ThresholdPolicy):
        return threshold
    if isinstance(threshold, str):
        return ThresholdPolicy.parse(threshold)
    return ThresholdPolicy.fixed(float(threshold))


class DCFOExplainer(BaseEstimator):
    """Estimator facade: fit a LOF model, detect outliers, explain them.

    Parameters mirror :class:`ExplainConfig` plus the model's ``k`` and
    duplicate policy. ``threshold`` accepts "auto" (two-step rule), a number,
    a "fixed:<v>"/"quantile:<q>" spec, or a ThresholdPolicy.
    ``non_actionable`` lists column indices the optimizer must not move.

    Fitted attributes: ``model_``, ``threshold_``, ``outlier_indices_``.
    """

    def __init__(self, k: int = 10, threshold="auto",
                 plausibility_target: Optional[float] = None,
                 non_actionable=None, queue_limit: int = 64,
                 constraint_tol: float = 1e-6, grad_tol: float = 1e-6,
                 step_tol: float = 1e-9, max_iterations: int = 200,
                 validity_mode: str = "query",
                 duplicate_policy: str = "epsilon",
                 gradient_method: str = "analytic"):
        self.k = k
        self.threshold = threshold
        self.plausibility_target = plausibility_target
        self.non_actionable = non_actionable
        self.queue_limit = queue_limit
        self.constraint_tol = constraint_tol
        self.grad_tol = grad_tol
        self.step_tol = step_tol
        self.max_iterations = max_iterations
        self.validity_mode = validity_mode
        self.duplicate_policy = duplicate_policy
        self.gradient_method = gradient_method

    def fit(self, X, y=None) -> "DCFOExplainer":
        self.model_ = ExactLOF(
            k=self.k, duplicate_policy=self.duplicate_policy).fit(X)
        policy = _parse_threshold_param(self.threshold)
        self.threshold_, self.outlier_indices_ = detect_outliers(
            self.model_, policy)
        return self

    def _config(self) -> ExplainConfig:
        mask = None
        if self.non_actionable is not None:
            mask = np.ones(self.model_.n_features_in_, dtype=bool)
            for c in self.non_actionable:
                mask[check_index(c, self.model_.n_features_in_,
                                 name="non_actionable column")] = False
        return ExplainConfig(
            threshold=ThresholdPolicy.fixed(self.threshold_),
            plausibility_target=self.plausibility_target,
            actionable_mask=mask,
            queue_limit=self.queue_limit,
            constraint_tol=self.constraint_tol,
            grad_tol=self.grad_tol,
            step_tol=self.step_tol,
            max_iterations=self.max_iterations,
            validity_mode=self.validity_mode,
            gradient_method=self.gradient_method,
        )

    def explain(self, index: int) -> CounterfactualResult:
        check_is_fitted(self, "model_")
        return explain_one(self.model_, index, self._config())

    def explain_many(self, index: int, n_counterfactuals: int
                     ) -> List[CounterfactualResult]:
        check_is_fitted(self, "model_")
        return explain_many(self.model_, index, n_counterfactuals,
                            self._config())

    def explain_full_opt(self, index: int) -> CounterfactualResult:
        check_is_fitted(self, "model_")
        return explain_full_opt(self.model_, index, self._config())

    def baseline(self, index: int) -> CounterfactualResult:
        check_is_fitted(self, "model_")
        return baseline_nearest_inlier(
            self.model_, index, self.threshold_,
            validity_mode=self.validity_mode,
            constraint_tol=self.constraint_tol)
