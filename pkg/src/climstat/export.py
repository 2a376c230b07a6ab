"""Plot-ready CSV/JSON writers and the readers the CLI needs to chain commands.

Every file starts with a header block naming the tool version and the
configuration hash: ``#`` comment lines for CSV, a ``meta`` object for JSON.
Floats are written with ``repr`` so they read back bit-identically.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

from .covariance import CovKey, PointwiseCovEstimate
from .grid import BoxKey, GridSpec, check_box
from .twoscale import FIELD_KINDS, StatField

FIELD_COLUMNS = ("lon_index", "lat_index", "depth_level", "month", "value", "provenance")
ESTIMATE_COLUMNS = (
    "lon_a", "lat_a", "depth_a", "month_a", "lon_b", "lat_b", "depth_b", "month_b",
    "lag", "covariance", "correlation", "support",
)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


class Stamp:
    """Version and configuration hash carried into every output file."""

    def __init__(self, version: str, config_hash: str):
        self.version = version
        self.config_hash = config_hash

    def comments(self, content: str) -> list[str]:
        return [f"climstat {self.version}", f"config_hash {self.config_hash}", f"content {content}"]

    def meta(self, content: str) -> dict:
        return {"tool": "climstat", "version": self.version,
                "config_hash": self.config_hash, "content": content}


def write_csv(path, stamp: Stamp, content: str, columns: Sequence[str], rows: Iterable) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        for c in stamp.comments(content):
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def write_json(path, stamp: Stamp, content: str, payload: dict) -> Path:
    path = Path(path)
    doc = {"meta": stamp.meta(content), **payload}
    path.write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n")
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise ValueError(f"{path}: no header row")
    return rows[0], rows[1:]


def field_rows(f: StatField):
    for b in f.boxes():
        yield (b.lon, b.lat, b.depth, b.month, f.values[b], f.provenance[b])


def write_field(path, f: StatField, stamp: Stamp) -> Path:
    return write_csv(path, stamp, f"field {f.kind}", FIELD_COLUMNS, field_rows(f))


def read_field(path, spec: GridSpec, kind: str | None = None) -> StatField:
    """Read a field CSV; ``kind`` defaults to the one named in the header."""
    if kind is None:
        with open(path) as fh:
            for ln in fh:
                if ln.startswith("# content field "):
                    kind = ln.split()[-1]
                    break
    if kind not in FIELD_KINDS:
        raise ValueError(f"{path}: cannot tell which field kind this is")
    header, rows = read_csv(path)
    if tuple(header) != FIELD_COLUMNS:
        raise ValueError(f"{path}: expected columns {','.join(FIELD_COLUMNS)}")
    out = StatField(spec, kind)
    for r in rows:
        box = BoxKey(int(r[0]), int(r[1]), int(r[2]), int(r[3]))
        check_box(box, spec)
        if box in out.values:
            raise ValueError(f"{path}: duplicate box {box}")
        out.values[box] = float(r[4])
        out.provenance[box] = r[5]
    return out


def write_estimates(path, estimates: Iterable[PointwiseCovEstimate], stamp: Stamp) -> Path:
    rows = ((*e.key.box_a, *e.key.box_b, e.key.lag, e.covariance, e.correlation, e.support)
            for e in estimates)
    return write_csv(path, stamp, "pointwise estimates", ESTIMATE_COLUMNS, rows)


def read_estimates(path, spec: GridSpec) -> list[PointwiseCovEstimate]:
    header, rows = read_csv(path)
    if tuple(header) != ESTIMATE_COLUMNS:
        raise ValueError(f"{path}: expected columns {','.join(ESTIMATE_COLUMNS)}")
    out = []
    for r in rows:
        a = BoxKey(*(int(x) for x in r[0:4]))
        b = BoxKey(*(int(x) for x in r[4:8]))
        check_box(a, spec)
        check_box(b, spec)
        key = CovKey(a, b, int(r[8]))
        if CovKey.canonical(a, b, key.lag) != key:
            raise ValueError(f"{path}: estimate key {key} is not canonical")
        corr = float(r[10]) if r[10] != "" else None
        out.append(PointwiseCovEstimate(key, float(r[9]), corr, int(r[11])))
    return out
