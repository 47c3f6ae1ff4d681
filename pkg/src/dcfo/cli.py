"""Command-line interface.

Three subcommands: ``explain`` (JSON counterfactual reports), ``benchmark``
(frozen-schema CSV over a dataset manifest), and ``region-map`` (2-D region
grid + key dictionary). Output is deterministic: floats are emitted with 17
significant digits and timing is suppressed unless requested, so identical
inputs produce byte-identical files.

Exit codes: 0 success, 1 requested work only partially succeeded (an
explanation ended exhausted/limit, or a benchmark had zero usable datasets),
2 invalid input.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional

import numpy as np

from .benchmark import (DatasetRunReport, run_benchmark, summary_lines,
                        write_report_csv)
from .data import DataError, Dataset, load_csv, standardize
from .explain import (ExplainConfig, baseline_nearest_inlier, detect_outliers,
                      explain_full_opt, explain_many, explain_one)
from .lof import ExactLOF, ThresholdPolicy
from .regions import region_map_grid

logger = logging.getLogger(__name__)

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO,
               "debug": logging.DEBUG}


# -- deterministic JSON ----------------------------------------------------

def _jsonable(value):
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    return value


def json_dumps(obj, indent: int = 0) -> str:
    """Serialize with floats at 17 significant digits, keys in insertion order."""
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        parts = [f"{inner}{json.dumps(str(k))}: {json_dumps(v, indent + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(parts) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        parts = [f"{inner}{json_dumps(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(parts) + "\n" + pad + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        if not np.isfinite(f):
            raise ValueError(f"non-finite value in JSON output: {f}")
        return format(f, ".17g")
    if isinstance(obj, (np.integer, int)):
        return str(int(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# -- shared helpers --------------------------------------------------------

class CliError(Exception):
    """Invalid input surfaced as exit code 2."""


def _configure_logging() -> None:
    name = os.environ.get("DCFO_LOG", "error").strip().lower()
    if name not in _LOG_LEVELS:
        raise CliError(
            f"DCFO_LOG must be one of {sorted(_LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(
        level=_LOG_LEVELS[name],
        format="%(levelname)s %(name)s: %(message)s")


def _load_dataset(path: str, has_header: bool, do_standardize: bool) -> Dataset:
    ds = load_csv(path, has_header=has_header)
    if do_standardize:
        ds, _ = standardize(ds)
    return ds


def _parse_threshold(text: str) -> Optional[ThresholdPolicy]:
    try:
        return ThresholdPolicy.parse(text)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _parse_non_actionable(text: Optional[str], ds: Dataset) -> Optional[np.ndarray]:
    """Comma-separated column indices or header names -> actionability mask."""
    if not text:
        return None
    mask = np.ones(ds.dim, dtype=bool)
    names = list(ds.column_names) if ds.column_names is not None else []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if token in names:
            col = names.index(token)
        else:
            try:
                col = int(token)
            except ValueError:
                raise CliError(
                    f"unknown column {token!r} in --non-actionable") from None
            if not 0 <= col < ds.dim:
                raise CliError(
                    f"--non-actionable column {col} out of range for "
                    f"{ds.dim} columns")
        mask[col] = False
    if not mask.any():
        raise CliError("--non-actionable freezes every column; nothing to move")
    return mask


def _write_text(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


# -- explain ---------------------------------------------------------------

def _cf_payload(result, ds: Dataset, standardized: bool, timing: bool) -> dict:
    entry = {
        "coordinates": _jsonable(result.location),
    }
    if standardized:
        entry["coordinates_original"] = _jsonable(
            ds.scaling.invert(result.location))
    entry.update({
        "distance": result.distance,
        "lof_value": result.lof_value,
        "region_key": result.key.to_jsonable() if result.key is not None else None,
        "status": result.status,
        "regions_visited": result.regions_visited,
        "wall_time": result.wall_time if timing else None,
    })
    return entry


def cmd_explain(args) -> int:
    ds = _load_dataset(args.data, args.has_header, args.standardize)
    model = ExactLOF(k=args.k).fit(ds.points)
    policy = _parse_threshold(args.threshold)
    t, outlier_idx = detect_outliers(model, policy)
    mask = _parse_non_actionable(args.non_actionable, ds)
    cfg = ExplainConfig(
        threshold=ThresholdPolicy.fixed(t),
        plausibility_target=args.plausibility,
        actionable_mask=mask,
        queue_limit=args.queue_limit,
        validity_mode=args.validity_mode,
    )

    if args.outlier_index == "all":
        targets = [int(i) for i in outlier_idx]
    else:
        try:
            targets = [int(args.outlier_index)]
        except ValueError:
            raise CliError(
                f"--outlier-index must be an integer or 'all', "
                f"got {args.outlier_index!r}") from None

    def explain(i: int) -> List:
        if args.method == "baseline":
            return [baseline_nearest_inlier(
                model, i, t, validity_mode=args.validity_mode,
                constraint_tol=cfg.constraint_tol)]
        if args.method == "fullopt":
            return [explain_full_opt(model, i, cfg)]
        if args.n > 1:
            return explain_many(model, i, args.n, cfg)
        return [explain_one(model, i, cfg)]

    if args.parallel > 1 and len(targets) > 1:
        with ThreadPoolExecutor(max_workers=args.parallel) as pool:
            all_results = list(pool.map(explain, targets))
    else:
        all_results = [explain(i) for i in targets]

    entries = []
    any_missing = False
    for i, results in zip(targets, all_results):
        entry = {
            "index": i,
            "coordinates": _jsonable(model.X_[i]),
        }
        if args.standardize:
            entry["coordinates_original"] = _jsonable(
                ds.scaling.invert(model.X_[i]))
        entry["lof"] = float(model.lof_scores_[i])
        entry["counterfactuals"] = [
            _cf_payload(r, ds, args.standardize, args.timing) for r in results]
        if args.n > 1 and args.method == "dcfo":
            if len(results) < args.n:
                any_missing = True
        if not results or any(r.status != "found" for r in results):
            any_missing = True
        entries.append(entry)

    doc = {
        "data": args.data,
        "n_points": model.n_samples_,
        "dim": model.n_features_in_,
        "k": args.k,
        "threshold_spec": args.threshold,
        "threshold": t,
        "method": args.method,
        "n_counterfactuals": args.n,
        "plausibility_target": args.plausibility,
        "standardize": bool(args.standardize),
        "seed": args.seed,
        "outliers": entries,
    }
    _write_text(args.output, json_dumps(doc) + "\n")
    return 1 if any_missing else 0


# -- benchmark ---------------------------------------------------------------

def _manifest_get(manifest: dict, key: str, flag_value, default):
    """Flag beats manifest beats built-in default."""
    if flag_value is not None:
        return flag_value
    if key in manifest:
        return manifest[key]
    return default


def cmd_benchmark(args) -> int:
    try:
        with open(args.manifest) as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read manifest: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"manifest is not valid JSON: {exc}") from None
    if not isinstance(manifest, dict) or "datasets" not in manifest:
        raise CliError('manifest must be a JSON object with a "datasets" list')

    methods = _manifest_get(manifest, "methods", args.methods, "dcfo,baseline")
    if isinstance(methods, str):
        methods = [m.strip() for m in methods.split(",") if m.strip()]
    k = int(_manifest_get(manifest, "k", args.k, 10))
    thr_spec = _manifest_get(manifest, "threshold", args.threshold, "auto")
    n_cfs = int(_manifest_get(manifest, "n_counterfactuals", args.n, 1))
    do_std = bool(manifest.get("standardize", False)) or args.standardize

    sweep = None
    if manifest.get("sweep"):
        sweep = []
        for entry in manifest["sweep"]:
            try:
                sk, sspec = entry
            except (TypeError, ValueError):
                raise CliError(
                    f"sweep entries must be [k, threshold_spec] pairs, "
                    f"got {entry!r}") from None
            sweep.append((int(sk), _parse_threshold(str(sspec))))

    loaded, failed = [], []
    for spec in manifest["datasets"]:
        if isinstance(spec, str):
            spec = {"path": spec}
        name = str(spec.get("name", os.path.basename(str(spec.get("path", "?")))))
        try:
            ds = _load_dataset(str(spec["path"]),
                               bool(spec.get("has_header", False)), do_std)
            loaded.append((name, ds))
        except (KeyError, OSError, DataError, ValueError) as exc:
            logger.error("dataset %s failed to load: %s", name, exc)
            failed.append(DatasetRunReport(
                dataset=name, k=k, threshold=None, n_outliers=0,
                error=str(exc)))

    cfg = ExplainConfig(threshold=_parse_threshold(str(thr_spec)))
    reports = run_benchmark(loaded, methods=methods, k=k, config=cfg,
                            sweep=sweep, n_counterfactuals=n_cfs,
                            n_jobs=max(1, args.parallel))
    reports = reports + failed
    write_report_csv(reports, args.output)
    for line in summary_lines(reports):
        print(line)
    print(f"report written to {args.output}")
    succeeded = sum(1 for r in reports if r.error is None)
    return 0 if succeeded > 0 else 1


# -- region-map --------------------------------------------------------------

def _auto_bbox(X: np.ndarray) -> tuple:
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    span = hi - lo
    pad = np.where(span > 0, 0.1 * span, 0.5)
    lo = lo - pad
    hi = hi + pad
    return (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def cmd_region_map(args) -> int:
    ds = _load_dataset(args.data, args.has_header, False)
    if ds.dim != 2:
        raise CliError(
            f"region maps need a 2-D dataset, got {ds.dim} columns")
    model = ExactLOF(k=args.k).fit(ds.points)
    if args.bbox is not None:
        try:
            parts = [float(v) for v in args.bbox.split(",")]
        except ValueError:
            raise CliError("--bbox must be four numbers x0,y0,x1,y1") from None
        if len(parts) != 4:
            raise CliError("--bbox must be four numbers x0,y0,x1,y1")
        bbox = tuple(parts)
    else:
        bbox = _auto_bbox(ds.points)

    exclude = args.outlier_index
    grid, keys = region_map_grid(model, bbox, args.resolution, exclude=exclude)

    grid_path = args.output_prefix + ".csv"
    keys_path = args.output_prefix + "_keys.json"
    lines = [",".join(str(v) for v in row) for row in grid]

    if args.outlier_index is not None:
        policy = _parse_threshold(args.threshold)
        t, _ = detect_outliers(model, policy)
        cfg = ExplainConfig(threshold=ThresholdPolicy.fixed(t),
                            queue_limit=args.queue_limit)
        path_log: List[np.ndarray] = []
        result = explain_one(model, args.outlier_index, cfg, path_log=path_log)
        origin = model.X_[args.outlier_index]
        lines.append("origin,%s,%s" % (format(origin[0], ".17g"),
                                       format(origin[1], ".17g")))
        for p in path_log[:-1]:
            lines.append("step,%s,%s" % (format(p[0], ".17g"),
                                         format(p[1], ".17g")))
        lines.append("final,%s,%s" % (format(result.location[0], ".17g"),
                                      format(result.location[1], ".17g")))
        logger.info("overlay path for outlier %d: %d point(s), status=%s",
                    args.outlier_index, len(path_log) + 1, result.status)

    _write_text(grid_path, "\n".join(lines) + "\n")
    doc = {
        "bbox": list(bbox),
        "resolution": args.resolution,
        "k": args.k,
        "n_regions": len(keys),
        "keys": {str(i): key.to_jsonable() for i, key in enumerate(keys)},
    }
    _write_text(keys_path, json_dumps(doc) + "\n")
    print(f"{len(keys)} regions over a {args.resolution}x{args.resolution} grid")
    print(f"wrote {grid_path} and {keys_path}")
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dcfo",
        description="Counterfactual explanations for LOF outliers.")
    sub = parser.add_subparsers(dest="command", required=True)

    pe = sub.add_parser("explain", help="explain outliers as JSON")
    pe.add_argument("--data", required=True, help="dataset CSV path")
    pe.add_argument("--has-header", action="store_true",
                    help="first CSV row holds column names")
    pe.add_argument("--k", type=int, default=10, help="LOF neighborhood size")
    pe.add_argument("--threshold", default="auto",
                    help="auto | fixed:<v> | quantile:<q>")
    pe.add_argument("--outlier-index", default="all",
                    help="dataset index to explain, or 'all' detected outliers")
    pe.add_argument("--n", type=int, default=1,
                    help="counterfactuals per outlier (dcfo only)")
    pe.add_argument("--method", choices=("dcfo", "fullopt", "baseline"),
                    default="dcfo")
    pe.add_argument("--non-actionable", default=None,
                    help="comma-separated column indices or names to freeze")
    pe.add_argument("--plausibility", type=float, default=None,
                    help="tighter LOF ceiling for returned locations")
    pe.add_argument("--standardize", action="store_true",
                    help="z-score columns before fitting")
    pe.add_argument("--seed", type=int, default=None,
                    help="recorded in the output for provenance")
    pe.add_argument("--queue-limit", type=int, default=64,
                    help="max regions explored per search")
    pe.add_argument("--validity-mode", choices=("query", "relocation"),
                    default="query")
    pe.add_argument("--timing", action="store_true",
                    help="include wall_time values (breaks byte determinism)")
    pe.add_argument("--parallel", type=int, default=1,
                    help="worker threads over outliers")
    pe.add_argument("--output", default=None, help="JSON path (default stdout)")
    pe.set_defaults(func=cmd_explain)

    pb = sub.add_parser("benchmark", help="run methods over a dataset manifest")
    pb.add_argument("--manifest", required=True,
                    help="JSON manifest of datasets and sweep points")
    pb.add_argument("--output", default="report.csv", help="report CSV path")
    pb.add_argument("--methods", default=None,
                    help="comma-separated subset of dcfo,fullopt,baseline")
    pb.add_argument("--k", type=int, default=None)
    pb.add_argument("--threshold", default=None,
                    help="auto | fixed:<v> | quantile:<q>")
    pb.add_argument("--n", type=int, default=None,
                    help="counterfactuals per outlier")
    pb.add_argument("--standardize", action="store_true")
    pb.add_argument("--parallel", type=int, default=1,
                    help="worker threads over datasets")
    pb.set_defaults(func=cmd_benchmark)

    pr = sub.add_parser("region-map", help="rasterize the region partition (2-D)")
    pr.add_argument("--data", required=True, help="dataset CSV path")
    pr.add_argument("--has-header", action="store_true")
    pr.add_argument("--k", type=int, default=10)
    pr.add_argument("--bbox", default=None, help="x0,y0,x1,y1 (default: data bounds padded 10%%)")
    pr.add_argument("--resolution", type=int, default=200,
                    help="grid cells per axis")
    pr.add_argument("--outlier-index", type=int, default=None,
                    help="overlay this point's counterfactual path")
    pr.add_argument("--threshold", default="auto",
                    help="threshold for the overlay search")
    pr.add_argument("--queue-limit", type=int, default=64)
    pr.add_argument("--output-prefix", default="regions",
                    help="writes <prefix>.csv and <prefix>_keys.json")
    pr.set_defaults(func=cmd_region_map)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        _configure_logging()
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
