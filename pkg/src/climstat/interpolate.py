"""Fill unestimated boxes of a field by scattered-data interpolation.

Boxes are mapped to a scaled 4-space ``(time, lon, lat, depth)`` in which a
month spans ``360 / months_per_year`` degrees (one year is one full turn,
like longitude), longitude and latitude are in degrees, and consecutive
depth levels are one degree apart. The periodic axes (time and longitude)
are handled by replicating every data point one period to either side.

Targets inside the convex hull of the replicated points get the linear
barycentric value of their Delaunay simplex; the others get the value of
the nearest replicated point.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree

from .grid import BoxKey, GridSpec
from .twoscale import ESTIMATED, FALLBACK_AVERAGE, INTERPOLATED, StatField

PERIOD = 360.0
MODES = ("triangulated", "nearest", "average", "none")


def scaled_points(boxes, spec: GridSpec) -> np.ndarray:
    """``(n, 4)`` array of scaled coordinates for ``boxes``."""
    arr = np.array([(b.month, b.lon, b.lat, b.depth) for b in boxes], dtype=float).reshape(-1, 4)
    scale = np.array([PERIOD / spec.months_per_year, spec.lon_resolution_deg,
                      spec.lat_resolution_deg, 1.0])
    return arr * scale


def replicate_periodic(points: np.ndarray, values: np.ndarray):
    """Copies of every point at time and longitude plus/minus one period.

    The unshifted copy comes first, so ``result[:n]`` is the input.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 4)
    values = np.asarray(values, dtype=float)
    shifts = [(0.0, 0.0)] + [s for s in itertools.product((0.0, -PERIOD, PERIOD), repeat=2)
                             if s != (0.0, 0.0)]
    pts, vals = [], []
    for dt, dl in shifts:
        p = points.copy()
        p[:, 0] += dt
        p[:, 1] += dl
        pts.append(p)
        vals.append(values)
    return np.concatenate(pts), np.concatenate(vals)


class _Nearest:
    """Nearest point; ties go to the lexicographically smallest offset ``point - target``.

    Using the offset rather than the absolute coordinate keeps the choice
    unchanged when data and targets are moved together across the seam.
    """

    def __init__(self, points: np.ndarray, values: np.ndarray):
        self.points = points
        self.values = values
        self.tree = cKDTree(points)

    def __call__(self, targets: np.ndarray) -> np.ndarray:
        out = np.empty(len(targets))
        if not len(targets):
            return out
        dist, _ = self.tree.query(targets)
        for i, (t, d) in enumerate(zip(targets, dist)):
            cand = np.array(self.tree.query_ball_point(t, d * (1 + 1e-9) + 1e-12), dtype=np.int64)
            diff = self.points[cand] - t
            d2 = np.einsum("ij,ij->i", diff, diff)
            cand = cand[d2 == d2.min()]
            if cand.size > 1:
                cand = cand[np.lexsort(diff[d2 == d2.min()].T[::-1])]
            out[i] = self.values[cand[0]]
        return out


def interpolate_points(data: np.ndarray, values: np.ndarray, targets: np.ndarray,
                       method: str = "triangulated") -> tuple[np.ndarray, np.ndarray]:
    """Interpolate in scaled space; returns ``(values, used_simplex)``.

    ``data`` should already include periodic replicas. Axes on which every
    data point shares one coordinate are dropped before triangulating; a
    target off that common value lies outside the hull.
    """
    data = np.asarray(data, dtype=float)
    values = np.asarray(values, dtype=float)
    targets = np.asarray(targets, dtype=float).reshape(-1, data.shape[1] if data.ndim == 2 else 4)
    if data.shape[0] == 0:
        raise ValueError("no data points")
    nearest = _Nearest(data, values)
    out = np.empty(len(targets))
    inside = np.zeros(len(targets), dtype=bool)
    if method == "triangulated":
        varying = np.ptp(data, axis=0) > 0
        on_plane = np.all(targets[:, ~varying] == data[0, ~varying], axis=1)
        sub = data[:, varying]
        if varying.any() and sub.shape[0] > sub.shape[1]:
            try:
                tri = Delaunay(sub)
            except QhullError:
                tri = None
            if tri is not None:
                tq = targets[:, varying]
                simplex = tri.find_simplex(tq)
                # the directed walk can miss targets lying exactly on a hull facet
                miss = np.flatnonzero((simplex < 0) & on_plane)
                if miss.size:
                    simplex[miss] = tri.find_simplex(tq[miss], bruteforce=True)
                inside = (simplex >= 0) & on_plane
                idx = np.flatnonzero(inside)
                if idx.size:
                    s = simplex[idx]
                    T = tri.transform[s]
                    k = sub.shape[1]
                    b = np.einsum("ijk,ik->ij", T[:, :k], tq[idx] - T[:, k])
                    w = np.column_stack([b, 1 - b.sum(axis=1)])
                    w = np.clip(w, 0.0, None)
                    w /= w.sum(axis=1, keepdims=True)
                    out[idx] = np.einsum("ij,ij->i", w, values[tri.simplices[s]])
    elif method != "nearest":
        raise ValueError(f"unknown method {method!r}")
    rest = np.flatnonzero(~inside)
    out[rest] = nearest(targets[rest])
    return out, inside


def _estimated(field: StatField) -> list[BoxKey]:
    boxes = [b for b in field.boxes() if field.provenance[b] == ESTIMATED]
    if not boxes:
        raise ValueError("field has no estimated boxes")
    return boxes


def interpolate_field(field: StatField, targets, method: str = "triangulated",
                      min_points: int = 5) -> StatField:
    """Fill ``targets`` from the estimated boxes of ``field``.

    Estimated boxes are never modified. With fewer than ``min_points``
    estimated boxes every target uses its nearest neighbour.
    """
    src = _estimated(field)
    spec = field.spec
    vals = np.array([field.values[b] for b in src])
    data, dvals = replicate_periodic(scaled_points(src, spec), vals)
    todo = sorted({b for b in targets if field.provenance.get(b) != ESTIMATED})
    out = field.copy()
    if not todo:
        return out
    if len(src) < min_points:
        method = "nearest"
    res, _ = interpolate_points(data, dvals, scaled_points(todo, spec), method)
    for b, v in zip(todo, res.tolist()):
        out.values[b] = v
        out.provenance[b] = INTERPOLATED
    return out


def fallback_average(field: StatField, targets=None) -> StatField:
    """Give every absent box the mean of the estimated values.

    ``targets`` defaults to every box of the grid (large for fine grids).
    """
    src = _estimated(field)
    mean = float(np.mean([field.values[b] for b in src]))
    spec = field.spec
    if targets is None:
        targets = (BoxKey(lo, la, d, m) for lo in range(spec.n_lon) for la in range(spec.n_lat)
                   for d in range(spec.n_depth) for m in range(spec.months_per_year))
    out = field.copy()
    for b in targets:
        if b not in out.values:
            out.values[b] = mean
            out.provenance[b] = FALLBACK_AVERAGE
    return out


def bounding_targets(field: StatField) -> list[BoxKey]:
    """All boxes within the index ranges spanned by the field's boxes."""
    boxes = field.boxes()
    if not boxes:
        return []
    arr = np.array(boxes)
    lo, hi = arr.min(axis=0), arr.max(axis=0)
    return [BoxKey(*k) for k in itertools.product(*(range(a, b + 1) for a, b in zip(lo, hi)))]


def fill(field: StatField, mode: str, targets=None) -> StatField:
    if mode not in MODES:
        raise ValueError(f"unknown interpolation mode {mode!r}")
    if mode == "none":
        return field.copy()
    if targets is None:
        targets = bounding_targets(field)
    if mode == "average":
        return fallback_average(field, targets)
    return interpolate_field(field, targets, method=mode)
