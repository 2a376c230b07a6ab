"""Long-scale / short-scale estimators on a binned store.

Every box-year is first reduced to a yearly aggregate (mean, median, spread
of the individual measurements). Climatological statistics are then computed
from the yearly values only, so a year with hundreds of measurements weighs
no more than a year with one.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np

from .grid import BoxKey, GridSpec, YearBoxKey
from .ingest import BinnedStore

FieldKind = Literal[
    "mean", "median_mean", "sd_concentration", "sd_noise",
    "iqr_concentration", "iqr_noise", "relative_sd", "qcd",
]
FIELD_KINDS: tuple[str, ...] = FieldKind.__args__

ESTIMATED = "estimated"
INTERPOLATED = "interpolated"
FALLBACK_AVERAGE = "fallback_average"

SPREAD_KINDS = {"sd_concentration", "sd_noise", "iqr_concentration", "iqr_noise"}


def quantile(values: Sequence[float], p: float) -> float:
    """Quantile at fractional rank ``(n - 1) * p`` with linear interpolation.

    ``values`` must already be sorted ascending.
    """
    n = len(values)
    if n == 0:
        raise ValueError("quantile of empty sequence")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p={p} outside [0, 1]")
    rank = (n - 1) * p
    lo = math.floor(rank)
    hi = min(lo + 1, n - 1)
    frac = rank - lo
    if frac == 0.0:
        return float(values[lo])
    return float(values[lo] + (values[hi] - values[lo]) * frac)


def iqr(sorted_values: Sequence[float]) -> float:
    return quantile(sorted_values, 0.75) - quantile(sorted_values, 0.25)


def sample_covariance(x: np.ndarray, y: np.ndarray) -> float:
    """Unbiased sample covariance (divisor n - 1).

    Shared by the variance and covariance estimators so that a box's lag-0
    self-covariance is bit-identical to its climatological variance.
    """
    n = x.size
    if n < 2:
        raise ValueError("need at least two pairs")
    dx = x - x.mean()
    dy = y - y.mean()
    return float(np.sum(dx * dy) / (n - 1))


@dataclass(frozen=True, slots=True)
class YearlyAggregate:
    key: YearBoxKey
    mean_c: float
    median_c: float
    count: int
    noise_sd: float | None
    noise_iqr: float | None


@dataclass
class StatField:
    """Per-box statistic; boxes without a value are simply absent."""

    spec: GridSpec
    kind: str
    values: dict[BoxKey, float] = field(default_factory=dict)
    provenance: dict[BoxKey, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")
        for box in self.values:
            self.provenance.setdefault(box, ESTIMATED)

    def __len__(self) -> int:
        return len(self.values)

    def __contains__(self, box) -> bool:
        return box in self.values

    def get(self, box: BoxKey) -> float | None:
        return self.values.get(box)

    def boxes(self) -> list[BoxKey]:
        return sorted(self.values)

    def copy(self) -> "StatField":
        return replace(self, values=dict(self.values), provenance=dict(self.provenance))


def yearly_aggregates(store: BinnedStore) -> list[YearlyAggregate]:
    out = []
    for key, vals in store.items():
        srt = np.sort(vals)
        n = srt.size
        out.append(YearlyAggregate(
            key=key,
            mean_c=float(vals.mean()),
            median_c=quantile(srt, 0.5),
            count=n,
            noise_sd=math.sqrt(sample_covariance(vals, vals)) if n >= 2 else None,
            noise_iqr=iqr(srt),
        ))
    return out


def group_by_box(aggregates: Iterable[YearlyAggregate]) -> dict[BoxKey, list[YearlyAggregate]]:
    """Aggregates per box, years ascending, boxes in key order."""
    groups: dict[BoxKey, list[YearlyAggregate]] = defaultdict(list)
    for agg in aggregates:
        groups[agg.key.box].append(agg)
    return {box: sorted(groups[box], key=lambda a: a.key.year) for box in sorted(groups)}


def climatological_mean(aggregates: Sequence[YearlyAggregate], spec: GridSpec,
                        min_years: int = 2, mode: str = "mean") -> StatField:
    """Mean over years of the yearly means (or median of yearly medians)."""
    if min_years < 1:
        raise ValueError("min_years must be >= 1")
    if mode not in ("mean", "median"):
        raise ValueError(f"unknown mode {mode!r}")
    out = StatField(spec, "mean" if mode == "mean" else "median_mean")
    for box, aggs in group_by_box(aggregates).items():
        if len(aggs) < min_years:
            continue
        if mode == "mean":
            out.values[box] = float(np.array([a.mean_c for a in aggs]).mean())
        else:
            out.values[box] = quantile(sorted(a.median_c for a in aggs), 0.5)
        out.provenance[box] = ESTIMATED
    return out


def yearly_means(aggs: Sequence[YearlyAggregate]) -> np.ndarray:
    return np.array([a.mean_c for a in aggs])


def climatological_sd(aggregates: Sequence[YearlyAggregate], spec: GridSpec,
                      min_years: int = 3) -> StatField:
    """Sample SD across years of the yearly means."""
    if min_years < 2:
        raise ValueError("min_years must be >= 2 for a standard deviation")
    out = StatField(spec, "sd_concentration")
    for box, aggs in group_by_box(aggregates).items():
        if len(aggs) < min_years:
            continue
        c = yearly_means(aggs)
        out.values[box] = math.sqrt(sample_covariance(c, c))
        out.provenance[box] = ESTIMATED
    return out


def climatological_iqr(aggregates: Sequence[YearlyAggregate], spec: GridSpec,
                       min_years: int = 3) -> StatField:
    if min_years < 1:
        raise ValueError("min_years must be >= 1")
    out = StatField(spec, "iqr_concentration")
    for box, aggs in group_by_box(aggregates).items():
        if len(aggs) < min_years:
            continue
        out.values[box] = iqr(np.sort(yearly_means(aggs)))
        out.provenance[box] = ESTIMATED
    return out


def noise_sd_field(aggregates: Sequence[YearlyAggregate], spec: GridSpec,
                   min_count: int = 3) -> StatField:
    """Pooled within-year SD per box.

    Years with at least two measurements contribute their variance weighted
    by ``count - 1``; a box needs ``min_count`` measurements in such years.
    """
    out = StatField(spec, "sd_noise")
    for box, aggs in group_by_box(aggregates).items():
        used = [a for a in aggs if a.count >= 2]
        if sum(a.count for a in used) < min_count or not used:
            continue
        weights = np.array([a.count - 1 for a in used], dtype=float)
        variances = np.array([a.noise_sd ** 2 for a in used])
        out.values[box] = math.sqrt(float(np.sum(weights * variances) / weights.sum()))
        out.provenance[box] = ESTIMATED
    return out


def noise_iqr_field(aggregates: Sequence[YearlyAggregate], spec: GridSpec,
                    min_count: int = 3) -> StatField:
    """Median over years of the within-year IQRs (same year filter as the SD)."""
    out = StatField(spec, "iqr_noise")
    for box, aggs in group_by_box(aggregates).items():
        used = [a for a in aggs if a.count >= 2]
        if sum(a.count for a in used) < min_count or not used:
            continue
        out.values[box] = quantile(sorted(a.noise_iqr for a in used), 0.5)
        out.provenance[box] = ESTIMATED
    return out


def relative_field(central: StatField, spread: StatField) -> StatField:
    """``spread / central`` wherever both exist and the central value is positive."""
    if central.spec != spread.spec:
        raise ValueError("fields live on different grids")
    kind = "qcd" if spread.kind.startswith("iqr") else "relative_sd"
    out = StatField(central.spec, kind)
    for box, s in spread.values.items():
        c = central.values.get(box)
        if c is not None and c > 0:
            out.values[box] = s / c
            out.provenance[box] = ESTIMATED
    return out


def index_aggregates(aggregates) -> Mapping[YearBoxKey, YearlyAggregate]:
    if isinstance(aggregates, Mapping):
        return aggregates
    return {a.key: a for a in aggregates}


def extract_series(store: BinnedStore, aggregates, key, which: str) -> np.ndarray:
    """Values sharing one distribution at a point.

    ``eta`` and ``epsilon`` take a :class:`YearBoxKey`; ``delta`` takes a
    :class:`BoxKey` and returns the yearly means in year order.
    """
    index = index_aggregates(aggregates)
    if which == "eta":
        out = np.array(store.values(key))
    elif which == "epsilon":
        vals = store.values(key)
        out = vals - index[key].mean_c if vals.size else vals
    elif which == "delta":
        if isinstance(key, YearBoxKey):
            raise ValueError("delta series are indexed by box, not box-year")
        years = sorted(store.available_years(key))
        out = np.array([index[YearBoxKey(key, y)].mean_c for y in years])
    else:
        raise ValueError(f"unknown series {which!r}")
    if out.size == 0:
        raise ValueError(f"empty {which} series at {key}")
    return out


def field_summary(f: StatField) -> dict:
    """Plot-ready aggregates: global mean, per-depth mean, mean monthly change."""
    spec = f.spec
    boxes = f.boxes()
    vals = np.array([f.values[b] for b in boxes])
    by_depth: dict[int, list[float]] = defaultdict(list)
    for b, v in zip(boxes, vals):
        by_depth[b.depth].append(v)
    changes: dict[int, list[float]] = defaultdict(list)
    if spec.months_per_year > 1:
        for b in boxes:
            nxt = b._replace(month=(b.month + 1) % spec.months_per_year)
            if nxt in f.values and (spec.months_per_year > 2 or b.month == 0):
                changes[b.depth].append(abs(f.values[nxt] - f.values[b]))
    all_changes = [c for d in sorted(changes) for c in changes[d]]
    return {
        "kind": f.kind,
        "count": len(boxes),
        "mean": float(vals.mean()) if vals.size else None,
        "provenance": {p: sum(1 for b in boxes if f.provenance[b] == p)
                       for p in (ESTIMATED, INTERPOLATED, FALLBACK_AVERAGE)},
        "depth_profile": [
            {"depth_level": d, "depth_m": spec.depth_levels[d],
             "count": len(by_depth[d]), "mean": float(np.mean(by_depth[d]))}
            for d in sorted(by_depth)
        ],
        "monthly_change": {
            "count": len(all_changes),
            "mean_abs_change": float(np.mean(all_changes)) if all_changes else None,
            "by_depth": [
                {"depth_level": d, "depth_m": spec.depth_levels[d],
                 "count": len(changes[d]), "mean_abs_change": float(np.mean(changes[d]))}
                for d in sorted(changes)
            ],
        },
    }
