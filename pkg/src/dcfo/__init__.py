"""Counterfactual explanations for LOF outliers.

Fit an exact LOF model, detect outliers, and compute the closest location
where a flagged point would no longer be flagged, by constrained optimization
inside regions where the frozen-neighborhood score is smooth.

Quick start::

    from dcfo import DCFOExplainer
    exp = DCFOExplainer(k=10).fit(X)
    for i in exp.outlier_indices_:
        print(exp.explain(i))
"""

from .data import (DataError, Dataset, ScalingParams, destandardize, load_csv,
                   sample_gaussian, save_csv, standardize)
from .lof import (DuplicatePointError, ExactLOF, ThresholdPolicy,
                  relocated_score, select_threshold)
from .regions import (CoincidentPointError, FrozenRegion, NeighborhoodKey,
                      key_of, region_map_grid, region_score,
                      region_score_gradient)
from .optimize import (NumericalOptimizationError, OptProblem, OptResult,
                       constraint_with_margin, minimize_in_region)
from .explain import (CounterfactualResult, DCFOExplainer, ExplainConfig,
                      baseline_nearest_inlier, detect_outliers, explain_full_opt,
                      explain_many, explain_one, resolve_threshold)
from .metrics import (diversity_det, mean_ranks, proximity_stats,
                      validity_fraction)
from .benchmark import (DatasetRunReport, MethodReport, run_benchmark,
                        write_report_csv)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "Dataset",
    "ScalingParams",
    "load_csv",
    "save_csv",
    "standardize",
    "destandardize",
    "sample_gaussian",
    "DuplicatePointError",
    "ExactLOF",
    "ThresholdPolicy",
    "relocated_score",
    "select_threshold",
    "CoincidentPointError",
    "FrozenRegion",
    "NeighborhoodKey",
    "key_of",
    "region_map_grid",
    "region_score",
    "region_score_gradient",
    "NumericalOptimizationError",
    "OptProblem",
    "OptResult",
    "constraint_with_margin",
    "minimize_in_region",
    "CounterfactualResult",
    "DCFOExplainer",
    "ExplainConfig",
    "baseline_nearest_inlier",
    "detect_outliers",
    "explain_full_opt",
    "explain_many",
    "explain_one",
    "resolve_threshold",
    "diversity_det",
    "mean_ranks",
    "proximity_stats",
    "validity_fraction",
    "DatasetRunReport",
    "MethodReport",
    "run_benchmark",
    "write_report_csv",
    "__version__",
]
