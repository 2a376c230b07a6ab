"""``climstat`` command line: ingest, stats, cov, distance, disttest, interpolate.

Exit status is 0 on success, 2 for a configuration problem and 3 for a data
problem; failures also print a one-line JSON error record on stderr.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .covariance import (assemble_matrix, correlation_histogram, pointwise_covariances,
                         to_correlations)
from .distance import axis_profiles, distance_function_verdict, group_by_difference
from .distributions import DistributionError, distribution_report, report_to_json
from .export import (Stamp, read_estimates, read_field, write_csv, write_estimates, write_field,
                     write_json)
from .grid import BoxKey, GridError, YearBoxKey, check_box
from .ingest import BinnedStore, IngestError, ingest_csv
from .interpolate import MODES, fill
from .ldl import NotPositiveDefiniteError, condition_pd
from .mmio import write_factors, write_symmetric
from .twoscale import (climatological_iqr, climatological_mean, climatological_sd, field_summary,
                       noise_iqr_field, noise_sd_field, relative_field, yearly_aggregates)

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


class DataError(Exception):
    pass


def _stamp(cfg: RunConfig) -> Stamp:
    return Stamp(__version__, cfg.hash)


def _load_store(path, cfg: RunConfig, explicit_config: bool) -> tuple[BinnedStore, RunConfig]:
    try:
        store = BinnedStore.load(path)
    except OSError as exc:
        raise DataError(f"cannot read store {path}: {exc.strerror}") from None
    if explicit_config and store.spec != cfg.grid:
        raise ConfigError("grid section does not match the grid stored in the store file")
    return store, dataclasses.replace(cfg, grid=store.spec)


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands ----------------------------------------------------------------

def cmd_ingest(csv_path, store_path, cfg: RunConfig) -> dict:
    try:
        with open(csv_path, newline="", encoding="utf-8") as fh:
            store, report = ingest_csv(fh, cfg.grid)
    except OSError as exc:
        raise DataError(f"cannot read {csv_path}: {exc.strerror}") from None
    except UnicodeDecodeError as exc:
        raise DataError(f"{csv_path} is not UTF-8 text: {exc.reason}") from None
    store.save(store_path)
    rep_path = Path(str(store_path) + ".report.json")
    payload = {**report.to_dict(), "box_years": len(store), "boxes": len(store.boxes())}
    write_json(rep_path, _stamp(cfg), "ingest report", payload)
    return {"store": str(store_path), "report": str(rep_path), **payload}


def compute_fields(store: BinnedStore, cfg: RunConfig) -> dict:
    th = cfg.thresholds
    spec = store.spec
    aggs = yearly_aggregates(store)
    mean = climatological_mean(aggs, spec, th.min_years, "mean")
    median = climatological_mean(aggs, spec, th.min_years, "median")
    sd = climatological_sd(aggs, spec, th.sd_min_years)
    iqr_c = climatological_iqr(aggs, spec, th.sd_min_years)
    fields = {
        "mean": mean,
        "median_mean": median,
        "sd_concentration": sd,
        "iqr_concentration": iqr_c,
        "sd_noise": noise_sd_field(aggs, spec, th.min_count),
        "iqr_noise": noise_iqr_field(aggs, spec, th.min_count),
        "relative_sd": relative_field(mean, sd),
        "qcd": relative_field(median, iqr_c),
    }
    if cfg.interpolation != "none":
        fields = {k: fill(f, cfg.interpolation) if len(f) else f for k, f in fields.items()}
    return fields


def cmd_stats(store_path, out_dir, cfg: RunConfig, explicit_config: bool = False) -> dict:
    store, cfg = _load_store(store_path, cfg, explicit_config)
    out = _out_dir(out_dir)
    stamp = _stamp(cfg)
    fields = compute_fields(store, cfg)
    depth_rows, change_rows, counts = [], [], {}
    for kind, f in fields.items():
        write_field(out / f"{kind}.csv", f, stamp)
        summary = field_summary(f)
        write_json(out / f"{kind}.summary.json", stamp, f"summary {kind}", summary)
        counts[kind] = summary["count"]
        depth_rows += [(kind, r["depth_level"], r["depth_m"], r["count"], r["mean"])
                       for r in summary["depth_profile"]]
        change_rows += [(kind, r["depth_level"], r["depth_m"], r["count"], r["mean_abs_change"])
                        for r in summary["monthly_change"]["by_depth"]]
    write_csv(out / "depth_profile.csv", stamp, "per-depth field means",
              ("kind", "depth_level", "depth_m", "count", "mean"), depth_rows)
    write_csv(out / "monthly_change.csv", stamp, "mean absolute change after one month",
              ("kind", "depth_level", "depth_m", "count", "mean_abs_change"), change_rows)
    return {"out_dir": str(out), "fields": counts, "interpolation": cfg.interpolation}


def cmd_cov(store_path, out_dir, cfg: RunConfig, threads: int = 1,
            explicit_config: bool = False) -> dict:
    store, cfg = _load_store(store_path, cfg, explicit_config)
    th = cfg.thresholds
    out = _out_dir(out_dir)
    stamp = _stamp(cfg)
    spec = store.spec
    aggs = yearly_aggregates(store)
    sd = climatological_sd(aggs, spec, th.sd_min_years)
    raw = pointwise_covariances(aggs, spec, th.min_support, th.max_lag, cfg.neighborhood, threads)
    estimates, missing_sd = to_correlations(raw, sd, th.noise_floor)
    write_estimates(out / "estimates.csv", estimates, stamp)
    write_csv(out / "correlation_histogram.csv", stamp, "correlation counts per bin",
              ("bin_lo", "bin_hi", "count"), correlation_histogram(estimates, min_abs=th.drop_below))

    boxes = {e.key.box_a for e in estimates} | {e.key.box_b for e in estimates}
    points = [YearBoxKey(b, y) for b in sorted(boxes) for y in sorted(store.available_years(b))]
    write_csv(out / "points.csv", stamp, "matrix row index",
              ("row", "lon_index", "lat_index", "depth_level", "month", "year"),
              ((i, *p.box, p.year) for i, p in enumerate(points)))
    matrix = assemble_matrix(estimates, points, th.drop_below)
    comments = stamp.comments("correlation matrix")
    write_symmetric(out / "correlation.mtx", matrix, comments)
    try:
        approx, factors, report = condition_pd(matrix, th.delta_floor,
                                               cfg.factorization.preserve_diagonal,
                                               cfg.factorization.ordering,
                                               cfg.factorization.growth_cap)
    except NotPositiveDefiniteError as exc:
        raise DataError(str(exc)) from None
    write_symmetric(out / "conditioned.mtx", approx, stamp.comments("conditioned correlation matrix"))
    write_factors(out / "factors", factors, stamp.comments("LDL factors of the conditioned matrix"))
    summary = {
        "estimates": len(estimates),
        "dropped_missing_sd": missing_sd,
        "variance_entries": sum(1 for e in estimates if e.key.is_variance),
        "points": len(points),
        **report.to_dict(),
        "min_d": float(factors.d.min()) if factors.n else None,
    }
    write_json(out / "modification.json", stamp, "conditioning summary", summary)
    return {"out_dir": str(out), **summary}


def cmd_distance(estimates_path, out_dir, cfg: RunConfig) -> dict:
    try:
        estimates = read_estimates(estimates_path, cfg.grid)
    except OSError as exc:
        raise DataError(f"cannot read {estimates_path}: {exc.strerror}") from None
    out = _out_dir(out_dir)
    stamp = _stamp(cfg)
    grouping = group_by_difference(estimates, cfg.grid, cfg.thresholds.min_group)
    write_csv(out / "groups.csv", stamp, "correlations grouped by separation",
              ("d_month", "d_lon", "d_lat", "d_depth", "d_year", "count", "mean", "iqr"),
              ((*g.difference, g.count, g.mean, g.iqr) for g in grouping.groups))
    for axis, rows in axis_profiles(grouping).items():
        write_csv(out / f"profile_{axis}.csv", stamp, f"single-axis profile {axis}",
                  ("magnitude", "count", "mean", "iqr"),
                  ((r["magnitude"], r["count"], r["mean"], r["iqr"]) for r in rows))
    if grouping.groups:
        verdict = distance_function_verdict(grouping)
    else:
        verdict = {"groups": 0, "verdict": None, "reason": "no group reached min_group"}
    payload = {
        **verdict,
        "min_group": grouping.min_group,
        "suppressed_groups": grouping.suppressed_groups,
        "suppressed_correlations": grouping.suppressed_correlations,
        "metadata": grouping.metadata,
    }
    write_json(out / "verdict.json", stamp, "distance-only verdict", payload)
    return {"out_dir": str(out), "groups": len(grouping.groups), "verdict": verdict["verdict"]}


def cmd_disttest(store_path, out_dir, cfg: RunConfig, threads: int = 1,
                 explicit_config: bool = False) -> dict:
    store, cfg = _load_store(store_path, cfg, explicit_config)
    th = cfg.thresholds
    out = _out_dir(out_dir)
    stamp = _stamp(cfg)
    report = distribution_report(store, yearly_aggregates(store), th.min_eta, th.min_delta,
                                 th.alpha, workers=threads)
    write_json(out / "report.json", stamp, "distribution tests", report_to_json(report))
    write_csv(out / "rejection_rates.csv", stamp, "rejection fraction per series, test and target",
              ("series", "test", "target", "tests_run", "rejected", "rejection_fraction"),
              ((s["series"], s["test"], s["target"], s["tests_run"], s["rejected"],
                s["rejection_fraction"]) for s in report["summary"]))
    where = ("series", "lon_index", "lat_index", "depth_level", "month", "year")

    def hist_rows():
        for p in report["points"]:
            h = p["histogram"]
            for k, c in enumerate(h.counts.tolist()):
                yield (*(p.get(w) for w in where), float(h.bin_edges[k]), float(h.bin_edges[k + 1]), c)

    def kde_rows():
        for p in report["points"]:
            if p["kde"] is None:
                continue
            for x, d in zip(p["kde"].grid.tolist(), p["kde"].density.tolist()):
                yield (*(p.get(w) for w in where), x, d)

    write_csv(out / "histograms.csv", stamp, "Freedman-Diaconis histograms",
              (*where, "bin_lo", "bin_hi", "count"), hist_rows())
    write_csv(out / "kde.csv", stamp, "Gaussian kernel densities (Scott bandwidth)",
              (*where, "x", "density"), kde_rows())
    return {"out_dir": str(out), "qualifying_points": report["qualifying_points"],
            "tests_run": report["tests_run"], "skipped": len(report["skipped"])}


def cmd_interpolate(field_path, out_path, cfg: RunConfig, mode: str | None = None,
                    targets_path=None) -> dict:
    mode = mode or cfg.interpolation
    if mode not in MODES:
        raise ConfigError(f"unknown interpolation mode {mode!r}")
    try:
        field = read_field(field_path, cfg.grid)
        targets = None
        if targets_path is not None:
            targets = []
            with open(targets_path) as fh:
                rows = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
            for r in rows[1:]:
                box = BoxKey(*(int(x) for x in r.split(",")[:4]))
                check_box(box, cfg.grid)
                targets.append(box)
    except OSError as exc:
        raise DataError(f"cannot read input: {exc.strerror}") from None
    if not len(field):
        raise DataError("field has no boxes to interpolate from")
    filled = fill(field, mode, targets)
    write_field(out_path, filled, _stamp(dataclasses.replace(cfg, interpolation=mode)))
    added = len(filled) - len(field)
    return {"out": str(out_path), "mode": mode, "boxes": len(filled), "filled": added}


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--threads", type=int, default=1, help="worker threads (output unaffected)")
    p = argparse.ArgumentParser(prog="climstat", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"climstat {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("ingest", parents=[common], help="bin a measurement CSV into a store")
    s.add_argument("csv")
    s.add_argument("store")
    s = sub.add_parser("stats", parents=[common], help="climatological and noise fields")
    s.add_argument("store")
    s.add_argument("out_dir")
    s = sub.add_parser("cov", parents=[common], help="covariances, correlation matrix, LDL factors")
    s.add_argument("store")
    s.add_argument("out_dir")
    s = sub.add_parser("distance", parents=[common], help="correlation vs separation diagnostics")
    s.add_argument("estimates")
    s.add_argument("out_dir")
    s = sub.add_parser("disttest", parents=[common], help="histograms, densities, normality tests")
    s.add_argument("store")
    s.add_argument("out_dir")
    s = sub.add_parser("interpolate", parents=[common], help="fill a field CSV")
    s.add_argument("field")
    s.add_argument("out")
    s.add_argument("--interpolation", choices=MODES, help="overrides interpolation.mode")
    s.add_argument("--targets", help="CSV of lon_index,lat_index,depth_level,month to fill")
    return p


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"status": "error", "exit_code": code, "kind": kind, "message": message}),
          file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args.config)
        explicit = args.config is not None
        if args.command == "ingest":
            result = cmd_ingest(args.csv, args.store, cfg)
        elif args.command == "stats":
            result = cmd_stats(args.store, args.out_dir, cfg, explicit)
        elif args.command == "cov":
            result = cmd_cov(args.store, args.out_dir, cfg, args.threads, explicit)
        elif args.command == "distance":
            result = cmd_distance(args.estimates, args.out_dir, cfg)
        elif args.command == "disttest":
            result = cmd_disttest(args.store, args.out_dir, cfg, args.threads, explicit)
        else:
            result = cmd_interpolate(args.field, args.out, cfg, args.interpolation, args.targets)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except (DataError, IngestError, GridError, DistributionError, ValueError) as exc:
        return _fail(EXIT_DATA, "data", str(exc))
    print(json.dumps({"status": "ok", "command": args.command, **result}, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
