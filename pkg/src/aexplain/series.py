"""Multivariate sensor time series: data model, CSV ingestion, windowing and validation.

A :class:`SeriesBundle` holds the M sequences of one equipment group aligned on
the union of their timestamps.  Cells a sensor did not report are *absent*
(stored as NaN in the dense matrix); they are never interpolated.  Because
non-finite measurements are rejected at parse time, NaN in the matrix always
means "absent".
"""

from __future__ import annotations

import csv
import io
import math
import os
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import cached_property
from typing import IO, Iterable, Mapping, Sequence as Seq

import numpy as np

from .errors import EmptyInput, MalformedRow, NonMonotonicTime

_INT_RE = re.compile(r"^[+-]?\d+$")


@dataclass(frozen=True, eq=False)
class Sequence:
    """Samples of one sensor; ``t`` in epoch milliseconds, strictly increasing."""

    sensor_id: str
    t: np.ndarray
    x: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.t, dtype=np.int64)
        x = np.asarray(self.x, dtype=np.float64)
        if t.shape != x.shape or t.ndim != 1:
            raise ValueError(f"{self.sensor_id}: t and x must be 1-d arrays of equal length")
        t.flags.writeable = False
        x.flags.writeable = False
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)

    def __len__(self) -> int:
        return int(self.t.shape[0])

    @property
    def N(self) -> int:
        return len(self)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Sequence):
            return NotImplemented
        return (
            self.sensor_id == other.sensor_id
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class SeriesBundle:
    """M sequences of one equipment group over a shared time axis.

    The constructor trusts its arguments (it is used by the tests to build
    deliberately broken bundles); use :meth:`from_sequences` or
    :meth:`from_matrix` to get an aligned bundle.
    """

    equipment_id: str
    sequences: Mapping[str, Sequence]
    time_axis: np.ndarray
    empty: bool = False
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        axis = np.asarray(self.time_axis, dtype=np.int64)
        axis.flags.writeable = False
        object.__setattr__(self, "time_axis", axis)
        object.__setattr__(self, "sequences", dict(self.sequences))

    # -- construction -----------------------------------------------------

    @classmethod
    def from_sequences(cls, sequences: Iterable[Sequence], equipment_id: str = "eq") -> "SeriesBundle":
        seqs = list(sequences)
        if not seqs:
            raise EmptyInput("a bundle needs at least one sequence")
        axis = np.unique(np.concatenate([s.t for s in seqs])) if seqs else np.empty(0, np.int64)
        return cls(equipment_id, {s.sensor_id: s for s in seqs}, axis)

    @classmethod
    def from_matrix(
        cls,
        time_axis: np.ndarray,
        values: np.ndarray,
        sensors: Seq[str],
        equipment_id: str = "eq",
    ) -> "SeriesBundle":
        """Build from a dense (T, M) matrix where NaN marks an absent cell."""
        time_axis = np.asarray(time_axis, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (time_axis.shape[0], len(sensors)):
            raise ValueError("matrix shape does not match axis/sensors")
        if time_axis.size > 1 and np.any(np.diff(time_axis) <= 0):
            raise ValueError("time axis must be strictly increasing")
        seqs = {}
        for j, sid in enumerate(sensors):
            col = values[:, j]
            present = ~np.isnan(col)
            seqs[sid] = Sequence(sid, time_axis[present], col[present])
        bundle = cls(equipment_id, seqs, time_axis, empty=time_axis.size == 0)
        # seed the cache so we do not realign what is already aligned
        mat = values.copy()
        mat.flags.writeable = False
        bundle.__dict__["matrix"] = mat
        return bundle

    # -- views ------------------------------------------------------------

    @property
    def sensors(self) -> tuple[str, ...]:
        return tuple(self.sequences)

    @property
    def M(self) -> int:
        return len(self.sequences)

    @cached_property
    def matrix(self) -> np.ndarray:
        """Dense (T, M) view aligned on ``time_axis``; NaN = absent."""
        axis = self.time_axis
        out = np.full((axis.shape[0], self.M), np.nan)
        for j, seq in enumerate(self.sequences.values()):
            if len(seq) == 0:
                continue
            idx = np.searchsorted(axis, seq.t)
            ok = (idx < axis.shape[0]) & (axis[np.minimum(idx, axis.shape[0] - 1)] == seq.t)
            out[idx[ok], j] = seq.x[ok]
        out.flags.writeable = False
        return out

    @cached_property
    def column_index(self) -> dict[str, int]:
        return {sid: j for j, sid in enumerate(self.sequences)}

    def column(self, sensor_id: str) -> np.ndarray:
        return self.matrix[:, self.column_index[sensor_id]]

    def with_matrix(self, values: np.ndarray) -> "SeriesBundle":
        """Copy of this bundle with replaced dense values (same axis and sensors)."""
        b = SeriesBundle.from_matrix(self.time_axis, values, self.sensors, self.equipment_id)
        object.__setattr__(b, "meta", dict(self.meta))
        return b

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SeriesBundle):
            return NotImplemented
        return (
            self.equipment_id == other.equipment_id
            and self.sensors == other.sensors
            and np.array_equal(self.time_axis, other.time_axis)
            and all(self.sequences[k] == other.sequences[k] for k in self.sequences)
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"SeriesBundle({self.equipment_id!r}, M={self.M}, T={self.time_axis.shape[0]}, empty={self.empty})"


# -- CSV ingestion ------------------------------------------------------------


def _parse_iso(text: str) -> int:
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(round(dt.timestamp() * 1000))


def _open_text(source) -> IO[str]:
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8-sig"))
    if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
        return open(source, newline="", encoding="utf-8-sig")
    if isinstance(source, str):
        return io.StringIO(source)
    return source


def parse_series(
    source,
    schema: Mapping[str, str] | None = None,
    equipment_id: str = "eq",
) -> SeriesBundle:
    """Parse a ``timestamp,<sensor>,...`` CSV into an aligned bundle.

    ``source`` may be bytes, CSV text, a path, or an open text stream.
    ``schema`` maps CSV column names to sensor ids; columns missing from it
    are dropped.  Without a schema every column after the first is a sensor.
    Timestamps are epoch milliseconds or ISO-8601, detected from the first
    data row; mixing the two is a :class:`MalformedRow`.  Empty cells are
    absent samples.  Data rows are numbered from 1 (the header is row 0).
    """
    fh = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInput("no header row") from None
        if len(header) < 2:
            raise EmptyInput("need a timestamp column and at least one sensor column")
        columns = [h.strip() for h in header[1:]]
        if schema is None:
            keep = list(range(len(columns)))
            sensors = columns
        else:
            keep = [i for i, c in enumerate(columns) if c in schema]
            sensors = [schema[columns[i]] for i in keep]
            missing = set(schema) - set(columns)
            if missing:
                raise MalformedRow(0, f"schema columns not in header: {sorted(missing)}")
        if len(set(sensors)) != len(sensors):
            raise MalformedRow(0, "duplicate sensor ids in header")

        times: list[int] = []
        rows: list[list[float]] = []
        iso_mode: bool | None = None
        nan = math.nan
        for rowno, rec in enumerate(reader, start=1):
            if not rec or (len(rec) == 1 and not rec[0].strip()):
                continue
            if len(rec) != len(header):
                raise MalformedRow(rowno, f"expected {len(header)} fields, got {len(rec)}")
            ts = rec[0].strip()
            is_int = bool(_INT_RE.match(ts))
            if iso_mode is None:
                iso_mode = not is_int
            try:
                if iso_mode:
                    if is_int:
                        raise ValueError("epoch timestamp in an ISO-8601 file")
                    t = _parse_iso(ts)
                else:
                    if not is_int:
                        raise ValueError(f"unparseable epoch-ms timestamp {ts!r}")
                    t = int(ts)
            except ValueError as exc:
                raise MalformedRow(rowno, str(exc)) from None
            if times and t <= times[-1]:
                kind = "duplicate" if t == times[-1] else "decreasing"
                raise NonMonotonicTime(rowno, f"{kind} timestamp {ts}")
            vals = []
            for i in keep:
                cell = rec[i + 1].strip()
                if not cell:
                    vals.append(nan)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise MalformedRow(rowno, f"non-numeric value {cell!r} in column {columns[i]!r}") from None
                if not math.isfinite(v):
                    raise MalformedRow(rowno, f"non-finite value {cell!r} in column {columns[i]!r}")
                vals.append(v)
            times.append(t)
            rows.append(vals)
    finally:
        if fh is not source:
            fh.close()
    if not times:
        raise EmptyInput("no data rows")
    matrix = np.array(rows, dtype=np.float64).reshape(len(times), len(sensors))
    bundle = SeriesBundle.from_matrix(np.array(times, dtype=np.int64), matrix, sensors, equipment_id)
    object.__setattr__(bundle, "meta", {"timestamp_format": "iso" if iso_mode else "ms"})
    return bundle


def serialize_series(bundle: SeriesBundle, timestamp_format: str | None = None) -> str:
    """Write a bundle back to CSV text; floats use ``repr`` so values round-trip."""
    fmt = timestamp_format or str(bundle.meta.get("timestamp_format", "ms"))
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["timestamp", *bundle.sensors])
    mat = bundle.matrix
    for i, t in enumerate(bundle.time_axis.tolist()):
        if fmt == "iso":
            ts = datetime.fromtimestamp(t / 1000, tz=timezone.utc).isoformat(timespec="milliseconds")
        else:
            ts = str(t)
        w.writerow([ts, *("" if v != v else repr(v) for v in mat[i].tolist())])
    return out.getvalue()


# -- windowing ------------------------------------------------------------------


def slice_window(bundle: SeriesBundle, interval: tuple[int, int]) -> SeriesBundle:
    """Samples with ``t_a <= t <= t_b`` in every sequence.

    An interval holding no timestamp gives a bundle with ``empty=True``
    rather than an error; the sequence set is always preserved.
    """
    t_a, t_b = int(interval[0]), int(interval[1])
    if t_a > t_b:
        raise ValueError(f"interval start {t_a} after end {t_b}")
    axis = bundle.time_axis
    lo = int(np.searchsorted(axis, t_a, side="left"))
    hi = int(np.searchsorted(axis, t_b, side="right"))
    seqs = {}
    for sid, seq in bundle.sequences.items():
        a = int(np.searchsorted(seq.t, t_a, side="left"))
        b = int(np.searchsorted(seq.t, t_b, side="right"))
        seqs[sid] = Sequence(sid, seq.t[a:b], seq.x[a:b])
    out = SeriesBundle(bundle.equipment_id, seqs, axis[lo:hi], empty=hi <= lo, meta=dict(bundle.meta))
    if "matrix" in bundle.__dict__:
        out.__dict__["matrix"] = bundle.matrix[lo:hi]
    return out


def full_interval(bundle: SeriesBundle) -> tuple[int, int]:
    if bundle.time_axis.size == 0:
        return (0, 0)
    return int(bundle.time_axis[0]), int(bundle.time_axis[-1])


# -- validation -------------------------------------------------------------------


@dataclass
class SequenceStats:
    sensor_id: str
    N: int
    min: float | None
    max: float | None
    monotonic: bool


@dataclass
class ValidationReport:
    sequences: list[SequenceStats]
    defects: list[str]

    @property
    def ok(self) -> bool:
        return not self.defects

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "defects": list(self.defects),
            "sequences": [vars(s) for s in self.sequences],
        }


def validate_series(bundle: SeriesBundle) -> ValidationReport:
    """Report-only structural check of a bundle; never raises, never mutates."""
    defects: list[str] = []
    stats: list[SequenceStats] = []
    axis = bundle.time_axis
    if bundle.M == 0:
        defects.append("bundle has no sequences")
    if axis.size > 1 and np.any(np.diff(axis) <= 0):
        defects.append("time axis not strictly increasing")
    seen = np.zeros(axis.shape[0], dtype=bool)
    for sid, seq in bundle.sequences.items():
        mono = bool(seq.t.size < 2 or np.all(np.diff(seq.t) > 0))
        if seq.N == 0:
            defects.append(f"{sid}: empty sequence")
            stats.append(SequenceStats(sid, 0, None, None, mono))
            continue
        if not mono:
            defects.append(f"{sid}: timestamps not strictly increasing")
        if not np.all(np.isfinite(seq.x)):
            defects.append(f"{sid}: non-finite values")
        idx = np.searchsorted(axis, seq.t)
        inside = (idx < axis.shape[0]) & (axis[np.minimum(idx, max(axis.shape[0] - 1, 0))] == seq.t) if axis.size else np.zeros(seq.N, bool)
        if not np.all(inside):
            defects.append(f"{sid}: axis mismatch ({int((~inside).sum())} timestamps not on the time axis)")
        seen[idx[inside]] = True
        stats.append(SequenceStats(sid, seq.N, float(np.min(seq.x)), float(np.max(seq.x)), mono))
    if axis.size and not np.all(seen):
        defects.append(f"axis mismatch: {int((~seen).sum())} axis timestamps carried by no sequence")
    return ValidationReport(stats, defects)
