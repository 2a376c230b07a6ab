"""Does a correlation depend only on the separation of its two points?

Correlations are grouped by their exact canonical separation vector
``(d_month, d_lon, d_lat, d_depth_level, d_year)``. If correlation were a
function of separation alone, every group would be (nearly) constant, so
the per-group interquartile ranges are the test statistic.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .covariance import PointwiseCovEstimate
from .grid import GridSpec, _wrap, canonical_sign
from .twoscale import iqr, quantile

AXES = ("month", "lon", "lat", "depth", "year")
VERDICT_THRESHOLDS = (0.05, 0.10, 0.20)


@dataclass(frozen=True)
class DifferenceGroup:
    difference: tuple[int, int, int, int, int]
    correlations: tuple[float, ...]
    iqr: float
    mean: float

    @property
    def count(self) -> int:
        return len(self.correlations)


@dataclass
class Grouping:
    groups: list[DifferenceGroup]
    suppressed_groups: int = 0
    suppressed_correlations: int = 0
    min_group: int = 10
    metadata: dict = field(default_factory=dict)


def separation(est: PointwiseCovEstimate, spec: GridSpec) -> tuple[int, int, int, int, int]:
    a, b = est.key.box_a, est.key.box_b
    raw = (
        _wrap(b.month - a.month, spec.months_per_year),
        _wrap(b.lon - a.lon, spec.n_lon),
        b.lat - a.lat,
        b.depth - a.depth,
        est.key.lag,
    )
    return canonical_sign(raw, (spec.months_per_year, spec.n_lon, None, None, None))


def group_by_difference(estimates, spec: GridSpec, min_group: int = 10) -> Grouping:
    """Partition correlations by canonical separation; report groups of ``min_group`` or more.

    Variance entries (a box with itself at lag 0) are not correlations
    between distinct points and are left out.
    """
    buckets: dict[tuple, list[float]] = defaultdict(list)
    for est in estimates:
        if est.correlation is None:
            raise ValueError("estimates must carry correlations")
        if est.key.is_variance:
            continue
        buckets[separation(est, spec)].append(est.correlation)
    out = Grouping([], min_group=min_group,
                   metadata={"lags": "all", "excludes": "lag-0 self pairs"})
    for diff in sorted(buckets):
        vals = sorted(buckets[diff])
        if len(vals) < min_group:
            out.suppressed_groups += 1
            out.suppressed_correlations += len(vals)
            continue
        out.groups.append(DifferenceGroup(
            difference=diff,
            correlations=tuple(vals),
            iqr=iqr(vals),
            mean=float(np.mean(vals)),
        ))
    return out


def distance_function_verdict(groups, thresholds=VERDICT_THRESHOLDS,
                              verdict_threshold: float = 0.05) -> dict:
    """Summarize group IQRs against the usual thresholds.

    The distance-only description is called unlikely when the median
    group IQR reaches ``verdict_threshold``.
    """
    if isinstance(groups, Grouping):
        groups = groups.groups
    if not groups:
        raise ValueError("no groups to judge")
    iqrs = sorted(g.iqr for g in groups)
    n = len(iqrs)
    median = quantile(iqrs, 0.5)
    unlikely = median >= verdict_threshold
    return {
        "groups": n,
        "fraction_iqr_at_least": {f"{t:g}": sum(1 for v in iqrs if v >= t) / n for t in thresholds},
        "iqr_quantiles": {f"{p:g}": quantile(iqrs, p) for p in (0.0, 0.05, 0.25, 0.5, 0.75, 0.95, 1.0)},
        "verdict_threshold": verdict_threshold,
        "verdict": "distance-only description unlikely" if unlikely
                   else "no evidence against distance-only description",
        "distance_only_unlikely": unlikely,
    }


def axis_profiles(groups) -> dict[str, list[dict]]:
    """Groups whose separation is nonzero on exactly one axis, by axis and magnitude."""
    if isinstance(groups, Grouping):
        groups = groups.groups
    profiles: dict[str, list[dict]] = {axis: [] for axis in AXES}
    for g in groups:
        nonzero = [i for i, v in enumerate(g.difference) if v != 0]
        if len(nonzero) != 1:
            continue
        i = nonzero[0]
        profiles[AXES[i]].append({
            "magnitude": abs(g.difference[i]),
            "iqr": g.iqr,
            "mean": g.mean,
            "count": g.count,
        })
    for rows in profiles.values():
        rows.sort(key=lambda r: r["magnitude"])
    return profiles
