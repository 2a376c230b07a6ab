"""Space-time grid: box assignment and periodic box differences.

Boxes are half-open in every direction. Longitude lives on [0, 360) and is
periodic, latitude runs from -90 to 90, depth is binned onto a table of
box-top depths and months are calendar months (optionally merged into
coarser seasons when ``months_per_year`` divides 12).
"""
from __future__ import annotations

import datetime as _dt
import math
from dataclasses import dataclass
from typing import NamedTuple

# Box-top depths in meters.
DEFAULT_DEPTH_LEVELS: tuple[float, ...] = (
    0, 25, 50, 85, 120, 170, 220, 290, 360, 455, 550, 670, 790, 935, 1080,
    1250, 1420, 1615, 1810, 2030, 2250, 2495, 2740, 3010, 3280, 3575, 3870,
    4190, 4510, 4855, 5200, 6000, 8000, 10000,
)


class GridError(ValueError):
    """Raised for coordinates or keys that fall outside the grid."""


@dataclass(frozen=True)
class GridSpec:
    lon_resolution_deg: float = 1.0
    lat_resolution_deg: float = 1.0
    depth_levels: tuple[float, ...] = DEFAULT_DEPTH_LEVELS
    months_per_year: int = 12
    year_range: tuple[int, int] = (1800, 2100)

    def __post_init__(self):
        object.__setattr__(self, "depth_levels", tuple(float(d) for d in self.depth_levels))
        object.__setattr__(self, "year_range", tuple(int(y) for y in self.year_range))
        if self.lon_resolution_deg <= 0 or self.lat_resolution_deg <= 0:
            raise GridError("resolutions must be positive")
        if not _divides(self.lon_resolution_deg, 360.0):
            raise GridError(f"lon resolution {self.lon_resolution_deg} does not divide 360")
        if not _divides(self.lat_resolution_deg, 180.0):
            raise GridError(f"lat resolution {self.lat_resolution_deg} does not divide 180")
        levels = self.depth_levels
        if not levels or levels[0] != 0.0:
            raise GridError("depth levels must start at 0")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise GridError("depth levels must be strictly ascending")
        if self.months_per_year < 1 or 12 % self.months_per_year:
            raise GridError("months_per_year must divide 12")
        lo, hi = self.year_range
        if lo > hi:
            raise GridError("empty year range")

    @property
    def n_lon(self) -> int:
        return int(round(360.0 / self.lon_resolution_deg))

    @property
    def n_lat(self) -> int:
        return int(round(180.0 / self.lat_resolution_deg))

    @property
    def n_depth(self) -> int:
        return len(self.depth_levels)

    def to_config(self) -> dict[str, str]:
        """Flat ``grid.*`` key-value form."""
        return {
            "grid.lon_resolution_deg": repr(float(self.lon_resolution_deg)),
            "grid.lat_resolution_deg": repr(float(self.lat_resolution_deg)),
            "grid.depth_levels": ",".join(_fmt_num(d) for d in self.depth_levels),
            "grid.months_per_year": str(self.months_per_year),
            "grid.year_range": f"{self.year_range[0]},{self.year_range[1]}",
        }

    @classmethod
    def from_config(cls, items: dict[str, str]) -> "GridSpec":
        known = {
            "lon_resolution_deg", "lat_resolution_deg", "depth_levels",
            "months_per_year", "year_range",
        }
        kwargs = {}
        for raw_key, value in items.items():
            key = raw_key[5:] if raw_key.startswith("grid.") else raw_key
            if key not in known:
                raise GridError(f"unknown grid key {raw_key!r}")
            if key in ("lon_resolution_deg", "lat_resolution_deg"):
                kwargs[key] = float(value)
            elif key == "depth_levels":
                kwargs[key] = tuple(float(v) for v in value.split(","))
            elif key == "months_per_year":
                kwargs[key] = int(value)
            else:
                lo, hi = (int(v) for v in value.split(","))
                kwargs[key] = (lo, hi)
        return cls(**kwargs)


def _divides(res: float, period: float) -> bool:
    k = period / res
    return abs(k - round(k)) < 1e-9 and round(k) >= 1


def _fmt_num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


class BoxKey(NamedTuple):
    lon: int
    lat: int
    depth: int
    month: int


class YearBoxKey(NamedTuple):
    box: BoxKey
    year: int


def check_box(box: BoxKey, spec: GridSpec) -> None:
    if not (0 <= box.lon < spec.n_lon and 0 <= box.lat < spec.n_lat
            and 0 <= box.depth < spec.n_depth and 0 <= box.month < spec.months_per_year):
        raise GridError(f"{box} outside grid")


def normalize_lon(lon: float) -> float:
    x = math.fmod(lon, 360.0)
    if x < 0:
        x += 360.0
    # -1e-20 + 360 rounds to 360.0
    if x >= 360.0:
        x = 0.0
    return x


def depth_level(depth: float, spec: GridSpec) -> int:
    """Index of the deepest level whose top is at or above ``depth``."""
    if not depth >= 0:
        raise GridError(f"negative depth {depth}")
    levels = spec.depth_levels
    if depth > levels[-1]:
        raise GridError(f"depth {depth} exceeds last depth level {levels[-1]}")
    lo, hi = 0, len(levels) - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if levels[mid] <= depth:
            lo = mid
        else:
            hi = mid - 1
    return lo


def assign_box(lon: float, lat: float, depth: float, date: _dt.date, spec: GridSpec) -> YearBoxKey:
    if not -90.0 <= lat <= 90.0:
        raise GridError(f"latitude {lat} outside [-90, 90]")
    if not math.isfinite(lon):
        raise GridError(f"non-finite longitude {lon}")
    lon_i = int(normalize_lon(lon) // spec.lon_resolution_deg)
    lon_i = min(lon_i, spec.n_lon - 1)
    # lat == 90 belongs to the northernmost row
    lat_i = min(int((lat + 90.0) // spec.lat_resolution_deg), spec.n_lat - 1)
    month_i = (date.month - 1) * spec.months_per_year // 12
    lo, hi = spec.year_range
    if not lo <= date.year <= hi:
        raise GridError(f"year {date.year} outside {lo}..{hi}")
    return YearBoxKey(BoxKey(lon_i, lat_i, depth_level(depth, spec), month_i), date.year)


def _wrap(d: int, period: int) -> int:
    """Minimal signed representative of ``d`` modulo ``period`` in (-period/2, period/2]."""
    d %= period
    if 2 * d > period:
        d -= period
    return d


def canonical_sign(vec: tuple[int, ...], periods: tuple[int | None, ...]) -> tuple[int, ...]:
    """Pick one of ``vec`` / ``-vec`` (periodic axes re-wrapped) deterministically.

    The lexicographically larger candidate wins, so the first nonzero
    component is positive and the result does not depend on orientation.
    """
    neg = tuple(-v if p is None else _wrap(-v, p) for v, p in zip(vec, periods))
    return max(vec, neg)


def wrapped_difference(a: BoxKey, b: BoxKey, spec: GridSpec) -> tuple[int, int, int, int]:
    """Canonical (d_month, d_lon, d_lat, d_depth_level) between two boxes."""
    raw = (
        _wrap(b.month - a.month, spec.months_per_year),
        _wrap(b.lon - a.lon, spec.n_lon),
        b.lat - a.lat,
        b.depth - a.depth,
    )
    return canonical_sign(raw, (spec.months_per_year, spec.n_lon, None, None))


def offset_box(box: BoxKey, d_month: int, d_lon: int, d_lat: int, d_depth: int,
               spec: GridSpec) -> BoxKey | None:
    """Box displaced by the given steps, wrapping periodic axes; None if off-grid."""
    lat = box.lat + d_lat
    depth = box.depth + d_depth
    if not (0 <= lat < spec.n_lat and 0 <= depth < spec.n_depth):
        return None
    return BoxKey((box.lon + d_lon) % spec.n_lon, lat, depth,
                  (box.month + d_month) % spec.months_per_year)
