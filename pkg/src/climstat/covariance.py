"""Shift-invariant pointwise covariances and the sparse correlation matrix.

A covariance between two boxes at a fixed year lag is estimated from all
year pairs ``(y, y + lag)`` for which both boxes have a yearly mean. The
resulting estimates are expanded onto box-year points to form a sparse
symmetric correlation matrix; unestimated entries are taken as zero.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .grid import BoxKey, GridSpec, YearBoxKey, offset_box
from .twoscale import StatField, YearlyAggregate, group_by_box, sample_covariance


class CovKey(NamedTuple):
    box_a: BoxKey
    box_b: BoxKey
    lag: int

    @classmethod
    def canonical(cls, a: BoxKey, b: BoxKey, lag: int) -> "CovKey":
        if b < a:
            a, b, lag = b, a, -lag
        if a == b and lag < 0:
            lag = -lag
        return cls(a, b, lag)

    @property
    def is_variance(self) -> bool:
        return self.box_a == self.box_b and self.lag == 0


@dataclass(frozen=True, slots=True)
class PointwiseCovEstimate:
    key: CovKey
    covariance: float
    correlation: float | None
    support: int


@dataclass(frozen=True)
class Neighborhood:
    """Largest per-axis box separation considered when pairing boxes."""

    months: int = 1
    lon: int = 1
    lat: int = 1
    depth: int = 1

    def offsets(self):
        return itertools.product(
            range(-self.months, self.months + 1), range(-self.lon, self.lon + 1),
            range(-self.lat, self.lat + 1), range(-self.depth, self.depth + 1),
        )


def _box_series(aggregates) -> dict[BoxKey, tuple[np.ndarray, np.ndarray]]:
    return {
        box: (np.array([a.key.year for a in aggs], dtype=np.int64),
              np.array([a.mean_c for a in aggs]))
        for box, aggs in group_by_box(aggregates).items()
    }


def _estimates_for(box_a, series, spec, neighborhood, max_lag, min_support):
    years_a, c_a = series[box_a]
    partners = set()
    for off in neighborhood.offsets():
        b = offset_box(box_a, *off, spec)
        if b is not None and b >= box_a and b in series:
            partners.add(b)
    out = []
    for box_b in sorted(partners):
        years_b, c_b = series[box_b]
        lags = range(0 if box_b == box_a else -max_lag, max_lag + 1)
        for lag in lags:
            _, ia, ib = np.intersect1d(years_a + lag, years_b, assume_unique=True,
                                       return_indices=True)
            if ia.size < min_support:
                continue
            cov = sample_covariance(c_a[ia], c_b[ib])
            out.append(PointwiseCovEstimate(CovKey(box_a, box_b, lag), cov, None, int(ia.size)))
    return out


def pointwise_covariances(aggregates: Sequence[YearlyAggregate], spec: GridSpec,
                          min_support: int = 35, max_lag: int = 1,
                          neighborhood: Neighborhood | None = None,
                          workers: int = 1) -> list[PointwiseCovEstimate]:
    """Estimate covariances of the yearly means between neighbouring boxes.

    Parameters
    ----------
    aggregates
        Yearly aggregates from :func:`~climstat.twoscale.yearly_aggregates`.
    spec
        Grid used to wrap longitude and month offsets.
    min_support
        Minimum number of year pairs (at least 2).
    max_lag
        Largest absolute year lag ``year_b - year_a``.
    neighborhood
        Per-axis bound on the box separation; defaults to one step per axis.
    workers
        Threads used for the per-box loop. Output order does not depend on it.

    Returns
    -------
    list of PointwiseCovEstimate
        Canonically keyed and sorted by key; ``correlation`` left unset.
    """
    if min_support < 2:
        raise ValueError("min_support must be >= 2")
    if max_lag < 0:
        raise ValueError("max_lag must be >= 0")
    neighborhood = neighborhood or Neighborhood()
    series = _box_series(aggregates)
    boxes = sorted(series)

    def run(chunk):
        return [e for box in chunk
                for e in _estimates_for(box, series, spec, neighborhood, max_lag, min_support)]

    if workers <= 1 or len(boxes) < 2:
        return run(boxes)
    size = max(1, math.ceil(len(boxes) / (4 * workers)))
    chunks = [boxes[i:i + size] for i in range(0, len(boxes), size)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(run, chunks))
    return [e for part in parts for e in part]


def to_correlations(estimates: Iterable[PointwiseCovEstimate], sd_field: StatField,
                    noise_floor: float = 0.1) -> tuple[list[PointwiseCovEstimate], int]:
    """Scale covariances by ``max(sd, noise_floor)`` at both ends.

    Returns the estimates with correlations filled in (clamped to [-1, 1])
    and the number of estimates dropped for lack of an SD at an endpoint.
    """
    if sd_field.kind != "sd_concentration":
        raise ValueError("correlations need the climatological SD field")
    out, dropped = [], 0
    for est in estimates:
        sa = sd_field.get(est.key.box_a)
        sb = sd_field.get(est.key.box_b)
        if sa is None or sb is None:
            dropped += 1
            continue
        corr = est.covariance / (max(sa, noise_floor) * max(sb, noise_floor))
        corr = min(1.0, max(-1.0, corr))
        out.append(PointwiseCovEstimate(est.key, est.covariance, corr, est.support))
    return out, dropped


@dataclass
class SparseSymmetric:
    """Symmetric matrix stored as its upper triangle in coordinate form.

    ``rows <= cols`` entrywise, entries sorted row-major with no duplicates.
    ``index`` optionally names the point behind each row.
    """

    n: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    index: list | None = None
    kind: str = "correlation"

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.vals = np.asarray(self.vals, dtype=np.float64)
        if not (self.rows.shape == self.cols.shape == self.vals.shape):
            raise ValueError("rows/cols/vals length mismatch")
        if self.rows.size:
            if np.any(self.rows > self.cols):
                raise ValueError("entries must lie in the upper triangle")
            if self.rows.min() < 0 or self.cols.max() >= self.n:
                raise ValueError("entry index out of range")
        order = np.lexsort((self.cols, self.rows))
        self.rows, self.cols, self.vals = self.rows[order], self.cols[order], self.vals[order]
        if self.rows.size > 1:
            same = (np.diff(self.rows) == 0) & (np.diff(self.cols) == 0)
            if same.any():
                raise ValueError("duplicate matrix entry")

    @classmethod
    def from_dense(cls, a, kind: str = "correlation", drop_zeros: bool = True) -> "SparseSymmetric":
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("matrix must be square")
        if not np.array_equal(a, a.T):
            raise ValueError("matrix is not symmetric")
        r, c = np.triu_indices(a.shape[0])
        v = a[r, c]
        keep = (v != 0) | (r == c) if drop_zeros else np.ones(v.size, bool)
        return cls(a.shape[0], r[keep], c[keep], v[keep], kind=kind)

    @classmethod
    def from_scipy(cls, m, kind: str = "correlation") -> "SparseSymmetric":
        m = sp.coo_matrix(m)
        if m.shape[0] != m.shape[1]:
            raise ValueError("matrix must be square")
        diff = (m - m.T).tocoo()
        if diff.nnz and np.any(diff.data != 0):
            raise ValueError("matrix is not symmetric")
        up = sp.triu(m).tocoo()
        up.sum_duplicates()
        return cls(m.shape[0], up.row, up.col, up.data, kind=kind)

    @property
    def nnz(self) -> int:
        """Stored upper-triangle entries, diagonal included."""
        return int(self.vals.size)

    def diagonal(self) -> np.ndarray:
        d = np.zeros(self.n)
        on = self.rows == self.cols
        d[self.rows[on]] = self.vals[on]
        return d

    def off_diagonal(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        off = self.rows != self.cols
        return self.rows[off], self.cols[off], self.vals[off]

    def to_scipy(self) -> sp.csr_matrix:
        r, c, v = self.off_diagonal()
        d = self.diagonal()
        i = np.arange(self.n)
        return sp.csr_matrix(
            (np.concatenate([v, v, d]), (np.concatenate([r, c, i]), np.concatenate([c, r, i]))),
            shape=(self.n, self.n),
        )

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.to_scipy() @ x


def assemble_matrix(estimates: Iterable[PointwiseCovEstimate], points: Sequence[YearBoxKey],
                    drop_below: float = 0.01) -> SparseSymmetric:
    """Expand box-pair correlations onto box-year points.

    Row ``i`` corresponds to ``points[i]``. An estimate for boxes ``a``, ``b``
    at lag ``L`` fills every entry between ``(a, y)`` and ``(b, y + L)``
    present in ``points``. Correlations below ``drop_below`` in magnitude
    are not stored; the diagonal is one.
    """
    points = list(points)
    n = len(points)
    row_of: dict[BoxKey, dict[int, int]] = {}
    for i, p in enumerate(points):
        years = row_of.setdefault(p.box, {})
        if p.year in years:
            raise ValueError(f"duplicate point {p}")
        years[p.year] = i
    seen = set()
    rows, cols, vals = list(range(n)), list(range(n)), [1.0] * n
    for est in estimates:
        if est.key in seen:
            raise ValueError(f"duplicate estimate for {est.key}")
        seen.add(est.key)
        if est.correlation is None:
            raise ValueError("estimates must carry correlations")
        if est.key.is_variance or abs(est.correlation) < drop_below:
            continue
        ya = row_of.get(est.key.box_a)
        yb = row_of.get(est.key.box_b)
        if not ya or not yb:
            continue
        for year, i in ya.items():
            j = yb.get(year + est.key.lag)
            if j is None:
                continue
            rows.append(min(i, j))
            cols.append(max(i, j))
            vals.append(est.correlation)
    return SparseSymmetric(n, rows, cols, vals, index=points, kind="correlation")


def correlation_histogram(estimates: Iterable[PointwiseCovEstimate], bin_width: float = 0.05,
                          min_abs: float = 0.01) -> list[tuple[float, float, int]]:
    """Counts of correlations per bin on [-1, 1], ignoring ``|r| < min_abs``."""
    nbins = int(round(2.0 / bin_width))
    counts = np.zeros(nbins, dtype=np.int64)
    for est in estimates:
        r = est.correlation
        if r is None or abs(r) < min_abs or est.key.is_variance:
            continue
        k = min(int((r + 1.0) / bin_width), nbins - 1)
        counts[k] += 1
    edges = -1.0 + bin_width * np.arange(nbins + 1)
    return [(float(edges[k]), float(edges[k + 1]), int(counts[k])) for k in range(nbins)]
