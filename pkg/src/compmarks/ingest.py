"""CSV ingestion of composition-marked point data.

Coordinates are taken as planar; project geographic data before
ingesting it.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .coda import ZeroReplacement, validate_and_close
from .errors import ConfigError, DataError, OutsideWindowError, ParseError, ZeroPartError
from .pattern import MarkedPattern, Window

__all__ = ["DatasetSchema", "IngestResult", "ingest_csv", "part_summary", "format_summary",
           "file_digest"]

SUMMARY_FIELDS = ("min", "q1", "mean", "median", "q3", "max")


@dataclass(frozen=True)
class DatasetSchema:
    """Column mapping and window rule for an input CSV.

    Either ``window`` is given explicitly or the bounding box of the points
    is grown by ``margin`` on every side.
    """

    x_column: str = "x"
    y_column: str = "y"
    part_columns: tuple = ()
    id_column: str | None = None
    window: Window | None = None
    margin: float = 0.0
    total: float = 1.0
    zero_policy: object = "reject"

    def __post_init__(self):
        object.__setattr__(self, "part_columns", tuple(self.part_columns))
        if len(self.part_columns) < 2:
            raise ConfigError("need at least two part columns")
        cols = [self.x_column, self.y_column, *self.part_columns]
        if self.id_column:
            cols.append(self.id_column)
        if len(set(cols)) != len(cols):
            raise ConfigError("schema columns must be distinct")
        if self.margin < 0:
            raise ConfigError("window margin must be nonnegative")
        if self.zero_policy != "reject" and not isinstance(self.zero_policy, ZeroReplacement):
            raise ConfigError(f"unknown zero policy {self.zero_policy!r}")


@dataclass(frozen=True, eq=False)
class IngestResult:
    pattern: MarkedPattern
    raw_parts: np.ndarray
    percent_scale: bool
    digest: str


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _number(text, row, column):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise ParseError(f"row {row}, column {column!r}: cannot parse {text!r}", row, column) from None
    if not math.isfinite(value):
        raise ParseError(f"row {row}, column {column!r}: non-finite value {text!r}", row, column)
    return value


def ingest_csv(path, schema):
    """Read a UTF-8 CSV with a header row into a :class:`MarkedPattern`.

    Rows are numbered from 1 for the first data row. Parts are validated
    and closed to ``schema.total``; ``percent_scale`` reports whether the
    raw parts were percentages (row sums within 1% of 100).
    """
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [schema.x_column, schema.y_column, *schema.part_columns]
        if schema.id_column:
            needed.append(schema.id_column)
        missing = [c for c in needed if c not in header]
        if missing:
            raise ParseError(f"missing columns {missing}", 0, missing[0])
        xy, raw, ids = [], [], []
        for row, rec in enumerate(reader, start=1):
            xy.append([_number(rec[schema.x_column], row, schema.x_column),
                       _number(rec[schema.y_column], row, schema.y_column)])
            raw.append([_number(rec[c], row, c) for c in schema.part_columns])
            if schema.id_column:
                ids.append(rec[schema.id_column])
    if not xy:
        raise DataError(f"{path} has no data rows")
    xy = np.array(xy)
    raw = np.array(raw)
    marks = []
    for row, parts in enumerate(raw, start=1):
        try:
            marks.append(validate_and_close(parts, schema.total, schema.zero_policy).parts)
        except ZeroPartError as exc:
            raise ZeroPartError(f"row {row}: {exc}", row) from None
        except DataError as exc:
            raise DataError(f"row {row}: {exc}") from None
    window = schema.window or Window.bounding_box(xy, schema.margin)
    outside = np.flatnonzero(~window.contains(xy)) + 1
    if outside.size:
        shown = ", ".join(map(str, outside[:10]))
        raise OutsideWindowError(f"rows outside the window: {shown}", outside.tolist())
    sums = raw.sum(axis=1)
    percent = bool(np.all(np.abs(sums - 100.0) <= 1.0))
    pattern = MarkedPattern(xy, np.array(marks), window, schema.total,
                            tuple(ids) if schema.id_column else None)
    return IngestResult(pattern, raw, percent, file_digest(path))


def part_summary(pattern, names=None, scale=100.0):
    """Min, quartiles, mean, median and max of each part, on a percent scale.

    Quartiles use linear interpolation between order statistics.
    """
    shares = pattern.marks / pattern.total * scale
    names = names or [f"V{j + 1}" for j in range(pattern.D)]
    out = {}
    for name, col in zip(names, shares.T):
        q1, med, q3 = np.quantile(col, [0.25, 0.5, 0.75])
        out[name] = {"min": float(col.min()), "q1": float(q1), "mean": float(col.mean()),
                     "median": float(med), "q3": float(q3), "max": float(col.max())}
    return out


def format_summary(summary, digits=1):
    """Plain-text table with one row per part."""
    head = ["Part", "Min", "Q1", "Mean", "Median", "Q3", "Max"]
    rows = [[name] + [f"{stats[f]:.{digits}f}" for f in SUMMARY_FIELDS]
            for name, stats in summary.items()]
    widths = [max(len(r[c]) for r in [head] + rows) for c in range(len(head))]
    lines = []
    for r in [head] + rows:
        cells = [r[0].ljust(widths[0])] + [r[c].rjust(widths[c]) for c in range(1, len(r))]
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"
