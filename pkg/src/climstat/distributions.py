"""Histograms, kernel densities and normality tests for η, δ and ε series.

The three tests follow their standard published procedures:

* Shapiro-Wilk with Royston's polynomial approximations for the
  coefficients and the null distribution of ``W`` (valid for 3 <= n <= 5000);
* Anderson-Darling with mean and variance estimated from the sample, the
  usual small-sample factor and Stephens' piecewise p-value curve;
* D'Agostino-Pearson ``K^2`` from the D'Agostino skewness and the
  Anscombe-Glynn kurtosis transforms, referred to chi-square(2).

A log-normal hypothesis is tested by applying the normal test to ``log x``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy import integrate, special

from .grid import YearBoxKey
from .ingest import BinnedStore
from .twoscale import group_by_box, index_aggregates, iqr

TESTS = ("shapiro_wilk", "anderson_darling", "dagostino_pearson")
TARGETS = ("normal", "lognormal")
KDE_GRID_POINTS = 512


class DistributionError(ValueError):
    """A series violates a precondition of the requested summary or test."""


@dataclass
class HistogramSummary:
    bin_edges: np.ndarray
    counts: np.ndarray
    bin_width: float

    def to_dict(self) -> dict:
        return {"bin_width": self.bin_width, "bin_edges": self.bin_edges.tolist(),
                "counts": self.counts.tolist()}


@dataclass
class KdeSummary:
    bandwidth: float
    grid: np.ndarray
    density: np.ndarray

    def integral(self) -> float:
        return float(integrate.trapezoid(self.density, self.grid))

    def to_dict(self) -> dict:
        return {"bandwidth": self.bandwidth, "grid_min": float(self.grid[0]),
                "grid_max": float(self.grid[-1]), "points": int(self.grid.size)}


@dataclass(frozen=True)
class TestResult:
    test: str
    target: str
    statistic: float
    p_value: float
    rejected: bool
    n: int

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return asdict(self)


def _series(x, min_n: int = 1) -> np.ndarray:
    a = np.asarray(x, dtype=float).ravel()
    if a.size < min_n:
        raise DistributionError(f"need at least {min_n} values, got {a.size}")
    if not np.all(np.isfinite(a)):
        raise DistributionError("series contains non-finite values")
    return a


# -- rules of thumb ---------------------------------------------------------

def freedman_diaconis_width(iqr_value: float, n: int) -> float:
    return 2.0 * iqr_value / float(np.cbrt(n))


def scott_bandwidth(sd: float, n: int) -> float:
    return sd * n ** -0.2


def histogram(series) -> HistogramSummary:
    """Equal-width histogram with the Freedman-Diaconis bin width.

    A constant series gives one zero-width bin; a series whose IQR is zero
    but which is not constant gets a single bin spanning its range.
    """
    x = np.sort(_series(series, 1))
    n = x.size
    lo, hi = float(x[0]), float(x[-1])
    if lo == hi:
        return HistogramSummary(np.array([lo, hi]), np.array([n]), 0.0)
    width = float(freedman_diaconis_width(iqr(x), n)) if n >= 2 else 0.0
    if width <= 0.0:
        width = hi - lo
    nbins = max(1, math.ceil((hi - lo) / width))
    while lo + nbins * width < hi:
        nbins += 1
    edges = lo + width * np.arange(nbins + 1)
    idx = np.minimum(np.floor((x - lo) / width).astype(np.int64), nbins - 1)
    counts = np.bincount(idx, minlength=nbins)
    return HistogramSummary(edges, counts, width)


def kde(series, grid_points: int = KDE_GRID_POINTS) -> KdeSummary:
    """Gaussian kernel density with Scott's bandwidth on a padded regular grid."""
    x = _series(series, 2)
    sd = float(np.std(x, ddof=1))
    if sd == 0.0:
        raise DistributionError("kernel density needs a non-constant series")
    h = float(scott_bandwidth(sd, x.size))
    grid = np.linspace(x.min() - 3 * h, x.max() + 3 * h, grid_points)
    dens = np.zeros(grid_points)
    for start in range(0, x.size, 4096):
        z = (grid[:, None] - x[None, start:start + 4096]) / h
        dens += np.exp(-0.5 * z * z).sum(axis=1)
    dens /= x.size * h * math.sqrt(2 * math.pi)
    return KdeSummary(h, grid, dens)


# -- Shapiro-Wilk -----------------------------------------------------------

_SW_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_SW_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_SW_C3 = (0.5440, -0.39978, 0.025054, -6.714e-4)
_SW_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_SW_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_SW_C6 = (-0.4803, -0.082676, 0.0030302)
_SW_G = (-2.273, 0.459)


def _poly(coef, x: float) -> float:
    return float(np.polynomial.polynomial.polyval(x, coef))


def shapiro_wilk_coefficients(n: int) -> np.ndarray:
    """Antisymmetric weights ``a`` for the ordered sample (ascending)."""
    if n < 3:
        raise DistributionError("Shapiro-Wilk needs n >= 3")
    a = np.zeros(n)
    if n == 3:
        a[-1] = math.sqrt(0.5)
    else:
        m = special.ndtri((np.arange(1, n + 1) - 0.375) / (n + 0.25))
        mm = float(np.sum(m * m))
        u = 1.0 / math.sqrt(n)
        an = m[-1] / math.sqrt(mm) + _poly(_SW_C1, u)
        if n > 5:
            an1 = m[-2] / math.sqrt(mm) + _poly(_SW_C2, u)
            phi = (mm - 2 * m[-1] ** 2 - 2 * m[-2] ** 2) / (1 - 2 * an ** 2 - 2 * an1 ** 2)
            a[:] = m / math.sqrt(phi)
            a[-2] = an1
        else:
            phi = (mm - 2 * m[-1] ** 2) / (1 - 2 * an ** 2)
            a[:] = m / math.sqrt(phi)
        a[-1] = an
    half = n // 2
    a[:half] = -a[::-1][:half]
    if n % 2:
        a[half] = 0.0
    return a


def _sw_pvalue(w: float, n: int) -> float:
    if n == 3:
        return min(1.0, max(0.0, 6 / math.pi * (math.asin(math.sqrt(w)) - math.pi / 3)))
    if w >= 1.0:
        return 1.0
    y = math.log1p(-w)
    if n <= 11:
        gamma = _poly(_SW_G, n)
        if y >= gamma:
            return 0.0
        y = -math.log(gamma - y)
        mu = _poly(_SW_C3, n)
        sigma = math.exp(_poly(_SW_C4, n))
    else:
        ln = math.log(n)
        mu = _poly(_SW_C5, ln)
        sigma = math.exp(_poly(_SW_C6, ln))
    return float(special.ndtr(-(y - mu) / sigma))


def shapiro_wilk(series, alpha: float = 0.01, target: str = "normal") -> TestResult:
    x = np.sort(_series(series))
    n = x.size
    if not 3 <= n <= 5000:
        raise DistributionError(f"Shapiro-Wilk needs 3 <= n <= 5000, got {n}")
    d = x - x.mean()
    ss = float(np.sum(d * d))
    if ss == 0.0:
        raise DistributionError("Shapiro-Wilk undefined for a constant series")
    a = shapiro_wilk_coefficients(n)
    w = min(1.0, float(np.sum(a * d)) ** 2 / ss)
    p = _sw_pvalue(w, n)
    return TestResult("shapiro_wilk", target, w, p, p < alpha, n)


# -- Anderson-Darling --------------------------------------------------------

def anderson_darling_statistic(x: np.ndarray) -> float:
    """A^2 against a normal with the sample mean and SD (ddof 1)."""
    x = np.sort(x)
    n = x.size
    z = (x - x.mean()) / np.std(x, ddof=1)
    i = np.arange(1, n + 1)
    s = np.sum((2 * i - 1) * (special.log_ndtr(z) + special.log_ndtr(-z[::-1])))
    return float(-n - s / n)


def _ad_pvalue(a2: float) -> float:
    if a2 < 0.2:
        p = 1 - math.exp(-13.436 + 101.14 * a2 - 223.73 * a2 ** 2)
    elif a2 < 0.34:
        p = 1 - math.exp(-8.318 + 42.796 * a2 - 59.938 * a2 ** 2)
    elif a2 < 0.6:
        p = math.exp(0.9177 - 4.279 * a2 - 1.38 * a2 ** 2)
    elif a2 <= 13:
        p = math.exp(1.2937 - 5.709 * a2 + 0.0186 * a2 ** 2)
    else:
        p = 0.0
    return min(1.0, max(0.0, p))


def anderson_darling(series, alpha: float = 0.01, target: str = "normal") -> TestResult:
    """Returns the adjusted statistic ``A*^2 = A^2 (1 + 0.75/n + 2.25/n^2)``."""
    x = _series(series)
    n = x.size
    if n < 8:
        raise DistributionError(f"Anderson-Darling needs n >= 8, got {n}")
    if np.ptp(x) == 0:
        raise DistributionError("Anderson-Darling undefined for a constant series")
    a2 = anderson_darling_statistic(x) * (1 + 0.75 / n + 2.25 / n ** 2)
    p = _ad_pvalue(a2)
    return TestResult("anderson_darling", target, a2, p, p < alpha, n)


# -- D'Agostino-Pearson ------------------------------------------------------

def skewness_z(x: np.ndarray) -> float:
    n = x.size
    d = x - x.mean()
    m2 = np.mean(d ** 2)
    b1 = float(np.mean(d ** 3) / m2 ** 1.5)
    y = b1 * math.sqrt((n + 1) * (n + 3) / (6.0 * (n - 2)))
    beta2 = (3.0 * (n * n + 27 * n - 70) * (n + 1) * (n + 3)
             / ((n - 2.0) * (n + 5) * (n + 7) * (n + 9)))
    w2 = -1 + math.sqrt(2 * (beta2 - 1))
    delta = 1 / math.sqrt(0.5 * math.log(w2))
    alpha = math.sqrt(2.0 / (w2 - 1))
    return delta * math.asinh(y / alpha)


def kurtosis_z(x: np.ndarray) -> float:
    n = x.size
    d = x - x.mean()
    m2 = np.mean(d ** 2)
    b2 = float(np.mean(d ** 4) / m2 ** 2)
    mean = 3.0 * (n - 1) / (n + 1)
    var = 24.0 * n * (n - 2) * (n - 3) / ((n + 1.0) ** 2 * (n + 3) * (n + 5))
    xs = (b2 - mean) / math.sqrt(var)
    sqrtbeta1 = (6.0 * (n * n - 5 * n + 2) / ((n + 7) * (n + 9))
                 * math.sqrt(6.0 * (n + 3) * (n + 5) / (n * (n - 2) * (n - 3))))
    a = 6.0 + 8.0 / sqrtbeta1 * (2.0 / sqrtbeta1 + math.sqrt(1 + 4.0 / sqrtbeta1 ** 2))
    denom = 1 + xs * math.sqrt(2 / (a - 4.0))
    if denom == 0:
        return -math.inf
    term2 = math.copysign(((1 - 2.0 / a) / abs(denom)) ** (1 / 3), denom)
    return (1 - 2 / (9.0 * a) - term2) / math.sqrt(2 / (9.0 * a))


def dagostino_pearson(series, alpha: float = 0.01, target: str = "normal") -> TestResult:
    x = _series(series)
    n = x.size
    if n < 20:
        raise DistributionError(f"D'Agostino-Pearson needs n >= 20, got {n}")
    if np.ptp(x) == 0:
        raise DistributionError("D'Agostino-Pearson undefined for a constant series")
    k2 = skewness_z(x) ** 2 + kurtosis_z(x) ** 2
    p = math.exp(-0.5 * k2)  # chi-square survival with 2 degrees of freedom
    return TestResult("dagostino_pearson", target, k2, p, p < alpha, n)


NORMAL_TESTS: dict[str, Callable[..., TestResult]] = {
    "shapiro_wilk": shapiro_wilk,
    "anderson_darling": anderson_darling,
    "dagostino_pearson": dagostino_pearson,
}

MIN_N = {"shapiro_wilk": 3, "anderson_darling": 8, "dagostino_pearson": 20}


def test_lognormal(series, test: str, alpha: float = 0.01) -> TestResult:
    x = _series(series)
    if np.any(x <= 0):
        raise DistributionError("lognormal undefined for nonpositive values")
    return NORMAL_TESTS[test](np.log(x), alpha=alpha, target="lognormal")


test_lognormal.__test__ = False


def run_test(series, test: str, target: str, alpha: float = 0.01) -> TestResult:
    if target == "normal":
        return NORMAL_TESTS[test](series, alpha=alpha)
    if target == "lognormal":
        return test_lognormal(series, test, alpha=alpha)
    raise ValueError(f"unknown target {target!r}")


# -- report ------------------------------------------------------------------

def _point_label(key) -> dict:
    box = key.box if isinstance(key, YearBoxKey) else key
    out = {"lon_index": box.lon, "lat_index": box.lat, "depth_level": box.depth, "month": box.month}
    if isinstance(key, YearBoxKey):
        out["year"] = key.year
    return out


def _analyse(series_name: str, key, values: np.ndarray, targets, alpha: float):
    point = {"series": series_name, **_point_label(key), "n": int(values.size)}
    skipped = []
    try:
        point["histogram"] = histogram(values)
        point["kde"] = kde(values)
    except DistributionError as exc:
        skipped.append({**point, "what": "kde", "reason": str(exc)})
        point["kde"] = None
    results = []
    for target in targets:
        for test in TESTS:
            try:
                results.append(run_test(values, test, target, alpha))
            except DistributionError as exc:
                skipped.append({**{k: v for k, v in point.items() if k not in ("histogram", "kde")},
                                "what": f"{test}/{target}", "reason": str(exc)})
    point["tests"] = results
    return point, skipped


def distribution_report(store: BinnedStore, aggregates, min_eta: int = 100, min_delta: int = 40,
                        alpha: float = 0.01, workers: int = 1) -> dict:
    """Summaries and normality tests at every point with enough values.

    η (raw measurements) and ε (measurements minus their box-year mean) are
    examined at box-years with at least ``min_eta`` values; δ (yearly means)
    at boxes with at least ``min_delta`` years. ε is tested against the
    normal target only. Tests whose preconditions fail are recorded under
    ``skipped`` rather than raising.
    """
    index = index_aggregates(aggregates)
    jobs = []
    for key in sorted(store.keys()):
        vals = store.values(key)
        if vals.size >= min_eta:
            jobs.append(("eta", key, np.array(vals), TARGETS))
            jobs.append(("epsilon", key, vals - index[key].mean_c, ("normal",)))
    for box, aggs in group_by_box(index.values()).items():
        if len(aggs) >= min_delta:
            jobs.append(("delta", box, np.array([a.mean_c for a in aggs]), TARGETS))

    def work(job):
        return _analyse(job[0], job[1], job[2], job[3], alpha)

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(work, jobs))
    else:
        done = [work(j) for j in jobs]

    points, skipped = [], []
    tally: dict[tuple[str, str, str], list[int]] = {}
    for point, sk in done:
        points.append(point)
        skipped.extend(sk)
        for r in point["tests"]:
            t = tally.setdefault((point["series"], r.test, r.target), [0, 0])
            t[0] += 1
            t[1] += int(r.rejected)
    summary = [
        {"series": s, "test": t, "target": g, "tests_run": c[0], "rejected": c[1],
         "rejection_fraction": c[1] / c[0]}
        for (s, t, g), c in sorted(tally.items())
    ]
    counts = {s: sum(1 for p in points if p["series"] == s) for s in ("eta", "delta", "epsilon")}
    return {
        "alpha": alpha,
        "min_eta": min_eta,
        "min_delta": min_delta,
        "qualifying_points": counts,
        "tests_run": sum(len(p["tests"]) for p in points),
        "points": points,
        "skipped": skipped,
        "summary": summary,
    }


def report_to_json(report: dict) -> dict:
    """Drop array payloads, keeping a JSON-serializable per-point record."""
    points = []
    for p in report["points"]:
        q = {k: v for k, v in p.items() if k not in ("histogram", "kde", "tests")}
        q["histogram_bins"] = int(p["histogram"].counts.size) if p.get("histogram") else None
        q["histogram_bin_width"] = p["histogram"].bin_width if p.get("histogram") else None
        q["kde_bandwidth"] = p["kde"].bandwidth if p.get("kde") else None
        q["tests"] = [r.to_dict() for r in p["tests"]]
        points.append(q)
    return {**{k: v for k, v in report.items() if k != "points"}, "points": points}


__all__ = [
    "DistributionError", "HistogramSummary", "KdeSummary", "TestResult",
    "anderson_darling", "dagostino_pearson", "distribution_report", "freedman_diaconis_width",
    "histogram", "kde", "report_to_json", "run_test", "scott_bandwidth", "shapiro_wilk",
    "test_lognormal",
]
