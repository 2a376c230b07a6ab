"""Measurement ingestion and the immutable box-year store."""
from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .grid import BoxKey, GridError, GridSpec, YearBoxKey, assign_box

CSV_HEADER = ("lon", "lat", "depth_m", "date", "value")

STORE_MAGIC = b"CLSTORE\x00"
STORE_VERSION = 1


class IngestError(ValueError):
    """Fatal ingestion problem (bad header, corrupt store file)."""


@dataclass(frozen=True)
class MeasurementRecord:
    lon: float
    lat: float
    depth: float
    date: _dt.date
    value: float


@dataclass
class IngestReport:
    rows: int = 0
    accepted: int = 0
    rejected: Counter = field(default_factory=Counter)

    @property
    def n_rejected(self) -> int:
        return sum(self.rejected.values())

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "accepted": self.accepted,
            "rejected": self.n_rejected,
            "reasons": dict(sorted(self.rejected.items())),
        }


class BinnedStore:
    """Measurement values grouped by (box, year).

    Each run holds the values of one box-year sorted by (date, value), so
    every downstream reduction sees the same order no matter how the input
    rows were ordered. Instances are read-only once built.
    """

    def __init__(self, spec: GridSpec, runs: dict[YearBoxKey, tuple[np.ndarray, np.ndarray]]):
        self.spec = spec
        self._runs: dict[YearBoxKey, tuple[np.ndarray, np.ndarray]] = {}
        self._years: dict[BoxKey, tuple[int, ...]] = {}
        for key in sorted(runs):
            dates, vals = runs[key]
            dates = np.asarray(dates, dtype=np.int32)
            vals = np.asarray(vals, dtype=np.float64)
            if vals.size == 0:
                continue
            order = np.lexsort((vals, dates))
            dates, vals = dates[order], vals[order]
            dates.flags.writeable = False
            vals.flags.writeable = False
            self._runs[key] = (dates, vals)
            self._years.setdefault(key.box, ())
            self._years[key.box] += (key.year,)

    @classmethod
    def from_records(cls, records: Iterable[MeasurementRecord], spec: GridSpec) -> "BinnedStore":
        buckets: dict[YearBoxKey, tuple[list, list]] = {}
        for r in records:
            key = assign_box(r.lon, r.lat, r.depth, r.date, spec)
            d, v = buckets.setdefault(key, ([], []))
            d.append(r.date.toordinal())
            v.append(r.value)
        return cls(spec, {k: (np.array(d), np.array(v)) for k, (d, v) in buckets.items()})

    @classmethod
    def from_values(cls, spec: GridSpec, data: dict[YearBoxKey, Iterable[float]]) -> "BinnedStore":
        """Build directly from per-box-year values (all dated mid-year)."""
        runs = {}
        for key, vals in data.items():
            vals = np.asarray(list(vals), dtype=np.float64)
            date = _dt.date(key.year, 7, 1).toordinal()
            runs[key] = (np.full(vals.size, date), vals)
        return cls(spec, runs)

    def __len__(self) -> int:
        return len(self._runs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinnedStore):
            return NotImplemented
        if self.spec != other.spec or list(self._runs) != list(other._runs):
            return False
        return all(
            np.array_equal(a[0], b[0]) and a[1].tobytes() == b[1].tobytes()
            for a, b in zip(self._runs.values(), other._runs.values())
        )

    @property
    def n_values(self) -> int:
        return sum(v.size for _, v in self._runs.values())

    def keys(self) -> list[YearBoxKey]:
        return list(self._runs)

    def boxes(self) -> list[BoxKey]:
        return sorted(self._years)

    def available_years(self, box: BoxKey) -> frozenset[int]:
        return frozenset(self._years.get(box, ()))

    def values(self, key: YearBoxKey) -> np.ndarray:
        run = self._runs.get(key)
        if run is None:
            return np.empty(0)
        return run[1]

    def dates(self, key: YearBoxKey) -> np.ndarray:
        run = self._runs.get(key)
        return np.empty(0, dtype=np.int32) if run is None else run[0]

    def items(self) -> Iterator[tuple[YearBoxKey, np.ndarray]]:
        for key, (_, vals) in self._runs.items():
            yield key, vals

    # -- persistence ------------------------------------------------------

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "BinnedStore":
        return cls.from_bytes(Path(path).read_bytes())

    def to_bytes(self) -> bytes:
        header = json.dumps(self.spec.to_config(), sort_keys=True).encode()
        keys = np.array(
            [(*k.box, k.year) for k in self._runs], dtype="<i4"
        ).reshape(-1, 5)
        counts = np.array([v.size for _, v in self._runs.values()], dtype="<u4")
        dates = np.concatenate([d for d, _ in self._runs.values()] or [np.empty(0)]).astype("<i4")
        vals = np.concatenate([v for _, v in self._runs.values()] or [np.empty(0)]).astype("<f8")
        buf = io.BytesIO()
        buf.write(STORE_MAGIC)
        buf.write(struct.pack("<II", STORE_VERSION, len(header)))
        buf.write(header)
        buf.write(struct.pack("<QQ", len(counts), len(vals)))
        for arr in (keys, counts, dates, vals):
            buf.write(arr.tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "BinnedStore":
        if blob[:8] != STORE_MAGIC:
            raise IngestError("not a store file (bad magic)")
        version, hlen = struct.unpack_from("<II", blob, 8)
        if version != STORE_VERSION:
            raise IngestError(f"unsupported store version {version}")
        pos = 16
        spec = GridSpec.from_config(json.loads(blob[pos:pos + hlen]))
        pos += hlen
        n_runs, n_vals = struct.unpack_from("<QQ", blob, pos)
        pos += 16

        def take(dtype, count):
            nonlocal pos
            arr = np.frombuffer(blob, dtype=dtype, count=count, offset=pos)
            pos += arr.nbytes
            return arr

        keys = take("<i4", 5 * n_runs).reshape(-1, 5)
        counts = take("<u4", n_runs)
        dates = take("<i4", n_vals)
        vals = take("<f8", n_vals)
        if pos != len(blob) or counts.sum() != n_vals:
            raise IngestError("corrupt store file")
        runs = {}
        start = 0
        for row, c in zip(keys.tolist(), counts.tolist()):
            key = YearBoxKey(BoxKey(*row[:4]), row[4])
            runs[key] = (dates[start:start + c].copy(), vals[start:start + c].copy())
            start += c
        return cls(spec, runs)


def _parse_row(row: list[str]) -> MeasurementRecord:
    if len(row) != 5:
        raise _Reject("wrong column count")
    try:
        lon, lat, depth, value = (float(row[i]) for i in (0, 1, 2, 4))
    except ValueError:
        raise _Reject("unparsable number") from None
    try:
        date = _dt.date.fromisoformat(row[3].strip())
    except ValueError:
        raise _Reject("invalid date") from None
    if not math.isfinite(value):
        raise _Reject("non-finite value")
    if not (math.isfinite(lon) and math.isfinite(lat) and math.isfinite(depth)):
        raise _Reject("non-finite coordinate")
    return MeasurementRecord(lon, lat, depth, date, value)


class _Reject(Exception):
    pass


def _reject_reason(err: GridError) -> str:
    msg = str(err)
    if msg.startswith("latitude"):
        return "latitude out of range"
    if msg.startswith("negative depth"):
        return "negative depth"
    if msg.startswith("depth"):
        return "depth out of range"
    if msg.startswith("year"):
        return "year out of range"
    return "invalid coordinate"


def ingest_csv(lines: Iterable[str], spec: GridSpec) -> tuple[BinnedStore, IngestReport]:
    """Parse ``lon,lat,depth_m,date,value`` rows into a store.

    A missing or wrong header raises :class:`IngestError`; bad data rows are
    counted per reason in the returned report and skipped.
    """
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("empty input: missing header") from None
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise IngestError(f"bad header {header!r}, expected {','.join(CSV_HEADER)}")

    report = IngestReport()
    buckets: dict[YearBoxKey, tuple[list, list]] = {}
    for row in reader:
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        report.rows += 1
        try:
            rec = _parse_row(row)
            key = assign_box(rec.lon, rec.lat, rec.depth, rec.date, spec)
        except _Reject as exc:
            report.rejected[str(exc)] += 1
            continue
        except GridError as exc:
            report.rejected[_reject_reason(exc)] += 1
            continue
        d, v = buckets.setdefault(key, ([], []))
        d.append(rec.date.toordinal())
        v.append(rec.value)
        report.accepted += 1
    store = BinnedStore(spec, {k: (np.array(d), np.array(v)) for k, (d, v) in buckets.items()})
    return store, report
