"""Experiment harness: run explanation methods over datasets and aggregate
validity, proximity, diversity, and runtime into frozen-schema CSV reports."""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ._validation import as_points_matrix
from .data import Dataset
from .explain import (ExplainConfig, baseline_nearest_inlier, detect_outliers,
                      explain_full_opt, explain_many, explain_one)
from .lof import ExactLOF, ThresholdPolicy
from .metrics import diversity_det, proximity_stats

logger = logging.getLogger(__name__)

METHOD_NAMES = ("dcfo", "fullopt", "baseline")

REPORT_COLUMNS = ("dataset", "k", "threshold", "method", "validity",
                  "proximity_mean", "proximity_sem", "diversity_det",
                  "runtime_mean_s")


@dataclass
class MethodReport:
    """Aggregated outcome of one method on one dataset.

    ``per_outlier`` rows are (outlier index, distance, valid, wall_time);
    distance is NaN when nothing was found. Proximity statistics cover valid
    outcomes only and are None when there were none; the SEM is additionally
    None when exactly one was valid. ``diversity_det`` is the mean per-outlier
    determinant and is None unless the run asked for multiple counterfactuals,
    with ``diversity_counts`` recording how many each outlier produced.
    """

    method: str
    per_outlier: List[Tuple[int, float, bool, float]]
    proximity_mean: Optional[float]
    proximity_sem: Optional[float]
    validity: float
    diversity_det: Optional[float]
    runtime_mean: float
    diversity_counts: Optional[List[int]] = None


@dataclass
class DatasetRunReport:
    """All method reports for one (dataset, k, threshold) cell.

    ``error`` is set (and ``reports`` empty) when the dataset failed outright;
    a failure never aborts the rest of the batch.
    """

    dataset: str
    k: int
    threshold: Optional[float]
    n_outliers: int
    reports: List[MethodReport] = field(default_factory=list)
    error: Optional[str] = None


def _as_matrix(data) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.points
    return as_points_matrix(data, copy=False, name="dataset")


def _run_method(method, model, index, t, cfg, n_counterfactuals):
    """One (method, outlier) cell -> (distance, valid, wall, locations)."""
    if method == "baseline":
        res = baseline_nearest_inlier(model, index, t,
                                      validity_mode=cfg.validity_mode,
                                      constraint_tol=cfg.constraint_tol)
        return res.distance, res.status == "found", res.wall_time, [res.location]
    if method == "fullopt":
        res = explain_full_opt(model, index, cfg)
        ok = res.status == "found"
        return res.distance, ok, res.wall_time, [res.location] if ok else []
    if method == "dcfo":
        if n_counterfactuals > 1:
            t0 = time.perf_counter()
            results = explain_many(model, index, n_counterfactuals, cfg)
            total = time.perf_counter() - t0
            if not results:
                return float("nan"), False, total, []
            wall = sum(r.wall_time for r in results)
            return results[0].distance, True, wall, [r.location for r in results]
        res = explain_one(model, index, cfg)
        ok = res.status == "found"
        return res.distance, ok, res.wall_time, [res.location] if ok else []
    raise ValueError(f"unknown method {method!r}; expected one of {METHOD_NAMES}")


def _run_cell(name, X, k, methods, cfg, n_counterfactuals) -> DatasetRunReport:
    try:
        # default duplicate clamping so repeated rows in real CSVs degrade
        # gracefully instead of aborting the dataset
        model = ExactLOF(k=k).fit(X)
        t, outliers = detect_outliers(model, cfg.threshold)
        cell_cfg = dataclasses.replace(cfg, threshold=ThresholdPolicy.fixed(t))
        report = DatasetRunReport(dataset=name, k=k, threshold=t,
                                  n_outliers=int(outliers.size))
        for method in methods:
            rows, walls, valid_d, locs_per, counts = [], [], [], [], []
            for i in outliers:
                d, ok, wall, locs = _run_method(method, model, int(i), t,
                                                cell_cfg, n_counterfactuals)
                rows.append((int(i), float(d), bool(ok), float(wall)))
                walls.append(wall)
                counts.append(len(locs))
                locs_per.append(locs)
                if ok:
                    valid_d.append(d)
            if valid_d:
                pmean, psem = proximity_stats(valid_d)
            else:
                pmean, psem = None, None
            div = None
            div_counts = None
            if n_counterfactuals > 1:
                div = float(np.mean([diversity_det(ls) for ls in locs_per])) \
                    if locs_per else 0.0
                div_counts = counts
            report.reports.append(MethodReport(
                method=method,
                per_outlier=rows,
                proximity_mean=pmean,
                proximity_sem=psem,
                validity=(sum(1 for r in rows if r[2]) / len(rows)) if rows else 1.0,
                diversity_det=div,
                runtime_mean=float(np.mean(walls)) if walls else 0.0,
                diversity_counts=div_counts,
            ))
        return report
    except Exception as exc:  # isolation: a bad dataset must not sink the batch
        logger.error("dataset %s (k=%d) failed: %s", name, k, exc)
        return DatasetRunReport(dataset=name, k=k, threshold=None,
                                n_outliers=0, error=str(exc))


def run_benchmark(datasets: Sequence[Tuple[str, object]],
                  methods: Sequence[str] = ("dcfo", "baseline"),
                  k: int = 10,
                  config: Optional[ExplainConfig] = None,
                  sweep: Optional[Sequence[Tuple[int, Optional[ThresholdPolicy]]]] = None,
                  n_counterfactuals: int = 1,
                  n_jobs: int = 1) -> List[DatasetRunReport]:
    """Run every method over every dataset (and sweep point).

    ``datasets`` holds (name, points) pairs; points may be a Dataset or any
    array-like. ``sweep`` optionally lists (k, threshold policy) pairs tried on
    each dataset, overriding ``k`` and the config's threshold; None runs the
    single configured point. Results come back in dataset-major, sweep-minor
    order regardless of ``n_jobs``.
    """
    cfg = config if config is not None else ExplainConfig()
    for m in methods:
        if m not in METHOD_NAMES:
            raise ValueError(f"unknown method {m!r}; expected one of {METHOD_NAMES}")
    points = sweep if sweep is not None else [(k, cfg.threshold)]
    jobs = []
    for name, data in datasets:
        for kk, policy in points:
            job_cfg = dataclasses.replace(cfg, threshold=policy)
            jobs.append((str(name), data, int(kk), job_cfg))

    def run(job):
        name, data, kk, job_cfg = job
        try:
            X = _as_matrix(data)
        except Exception as exc:
            logger.error("dataset %s could not be loaded: %s", name, exc)
            return DatasetRunReport(dataset=name, k=kk, threshold=None,
                                    n_outliers=0, error=str(exc))
        return _run_cell(name, X, kk, methods, job_cfg, n_counterfactuals)

    if n_jobs == 1 or len(jobs) <= 1:
        return [run(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(run, jobs))


def _cell(value: Optional[float], fmt: str = "%.17g") -> str:
    return "" if value is None else fmt % value


def write_report_csv(reports: Sequence[DatasetRunReport], path) -> None:
    """Write the frozen-schema report CSV.

    One row per (dataset, k, threshold, method). A failed dataset contributes
    a single row with method "error" and empty metric cells so the failure is
    visible without widening the schema.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for rep in reports:
            if rep.error is not None:
                w.writerow([rep.dataset, rep.k, "", "error", "", "", "", "", ""])
                continue
            for mr in rep.reports:
                w.writerow([
                    rep.dataset,
                    rep.k,
                    _cell(rep.threshold),
                    mr.method,
                    _cell(mr.validity),
                    _cell(mr.proximity_mean),
                    _cell(mr.proximity_sem),
                    _cell(mr.diversity_det),
                    _cell(mr.runtime_mean),
                ])


def summary_lines(reports: Sequence[DatasetRunReport]) -> List[str]:
    """Human-readable table, one line per report row (printed by the CLI)."""
    lines = ["%-20s %4s %-10s %-9s %8s %10s %10s" % (
        "dataset", "k", "threshold", "method", "validity", "proximity", "time_s")]
    for rep in reports:
        if rep.error is not None:
            lines.append("%-20s %4d %-10s %-9s FAILED: %s"
                         % (rep.dataset, rep.k, "-", "-", rep.error))
            continue
        for mr in rep.reports:
            prox = "-" if mr.proximity_mean is None else "%.4f" % mr.proximity_mean
            lines.append("%-20s %4d %-10.6g %-9s %8.2f %10s %10.4f" % (
                rep.dataset, rep.k, rep.threshold, mr.method,
                mr.validity, prox, mr.runtime_mean))
    return lines
