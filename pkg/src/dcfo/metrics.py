"""Evaluation metrics for counterfactual sets: proximity, validity, diversity,
and cross-method mean ranks."""

from __future__ import annotations

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

_DET_FLOOR = 1e-300


def proximity_stats(distances: Sequence[float]
                    ) -> Tuple[float, Optional[float]]:
    """Mean and standard error of a batch of distances.

    SEM uses the n-1 sample standard deviation over sqrt(n) and is None for a
    single observation. Raises on an empty batch.
    """
    d = np.asarray(list(distances), dtype=np.float64)
    if d.size == 0:
        raise ValueError("proximity_stats needs at least one distance")
    mean = float(np.mean(d))
    if d.size == 1:
        return mean, None
    sem = float(np.std(d, ddof=1) / np.sqrt(d.size))
    return mean, sem


def validity_fraction(lof_values: Sequence[float], threshold: float,
                      tol: float = 1e-6) -> float:
    """Fraction of counterfactuals whose score is at most threshold + tol."""
    v = np.asarray(list(lof_values), dtype=np.float64)
    if v.size == 0:
        raise ValueError("validity_fraction needs at least one value")
    return float(np.mean(v <= threshold + tol))


def diversity_det(locations: Sequence[np.ndarray]) -> float:
    """Determinantal diversity of a counterfactual set.

    Kernel K_ij = 1/(1 + ||x_i - x_j||); the determinant grows toward 1 as
    the set spreads out and collapses to 0 when two members coincide. Fewer
    than two members scores 0 by convention. A nonnegative quantity, so tiny
    negative determinants from round-off are clipped.
    """
    pts = [np.asarray(p, dtype=np.float64) for p in locations]
    m = len(pts)
    if m < 2:
        return 0.0
    X = np.stack(pts)
    diff = X[:, None, :] - X[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    det = float(np.linalg.det(1.0 / (1.0 + dist)))
    if det < _DET_FLOOR:
        return 0.0
    return det


def mean_ranks(per_dataset_values: Dict[str, List[Optional[float]]],
               higher_is_better: bool = False) -> Dict[str, float]:
    """Average rank of each method across datasets (1 = best).

    ``per_dataset_values`` maps method name to one value per dataset, aligned
    across methods. Ties share the average rank. A missing value (None/NaN)
    ranks last on that dataset.
    """
    methods = list(per_dataset_values)
    if not methods:
        return {}
    n_ds = len(per_dataset_values[methods[0]])
    for m in methods:
        if len(per_dataset_values[m]) != n_ds:
            raise ValueError("methods must cover the same datasets")
    if n_ds == 0:
        raise ValueError("mean_ranks needs at least one dataset")
    totals = {m: 0.0 for m in methods}
    worst = -np.inf if higher_is_better else np.inf
    for d in range(n_ds):
        col = np.array(
            [worst if (per_dataset_values[m][d] is None
                       or not np.isfinite(per_dataset_values[m][d]))
             else float(per_dataset_values[m][d])
             for m in methods], dtype=np.float64)
        ranks = rankdata(-col if higher_is_better else col, method="average")
        for m, r in zip(methods, ranks):
            totals[m] += float(r)
    return {m: totals[m] / n_ds for m in methods}
