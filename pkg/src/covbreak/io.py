"""Delimited-text ingestion and preprocessing."""

from __future__ import annotations

import csv
import math
import sys
from dataclasses import dataclass

import numpy as np

from .exceptions import DataFormatError

__all__ = ["IngestSpec", "ingest", "parse_row", "log_returns", "center", "mean_to_sd_ratio"]


@dataclass(frozen=True)
class IngestSpec:
    """Where and how to read a table: rows are time, columns coordinates.

    ``header`` is ``True``/``False`` or ``None`` to skip a first row only when
    it is not numeric. ``path`` of ``None`` or ``"-"`` reads standard input.
    """

    path: str | None = None
    delimiter: str = ","
    header: bool | None = None
    log_returns: bool = False
    center: bool = False


def parse_row(cells, row: int) -> list[float]:
    out = []
    for col, cell in enumerate(cells, start=1):
        try:
            v = float(cell)
        except ValueError:
            raise DataFormatError(f"non-numeric cell {cell.strip()!r}", row, col) from None
        if not math.isfinite(v):
            raise DataFormatError(f"non-finite cell {cell.strip()!r}", row, col)
        out.append(v)
    return out


def _is_numeric(cells) -> bool:
    try:
        [float(c) for c in cells]
    except ValueError:
        return False
    return True


def log_returns(P: np.ndarray, row_numbers=None) -> np.ndarray:
    """Column-wise ``log P[t] - log P[t-1]``; prices must be positive.

    ``row_numbers`` maps rows of ``P`` to source lines for error messages.
    """
    bad = np.argwhere(P <= 0)
    if bad.size:
        r, c = bad[0]
        line = row_numbers[r] if row_numbers is not None else r + 1
        raise DataFormatError(f"non-positive price {P[r, c]} under log returns", line, c + 1)
    L = np.log(P)
    return L[1:] - L[:-1]


def center(X: np.ndarray) -> np.ndarray:
    return X - X.mean(axis=0)


def mean_to_sd_ratio(X: np.ndarray) -> np.ndarray:
    """``|column mean| / column sd`` (``inf`` for constant nonzero columns)."""
    m = np.abs(X.mean(axis=0))
    sd = X.std(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(sd > 0, m / np.where(sd > 0, sd, 1.0), np.where(m > 0, np.inf, 0.0))
    return r


def ingest(spec: IngestSpec, stream=None) -> np.ndarray:
    """Read the table, then apply log returns and centring (in that order)."""
    if stream is None:
        if spec.path in (None, "-"):
            stream = sys.stdin
        else:
            with open(spec.path, newline="", encoding="utf-8") as fh:
                return ingest(spec, fh)
    reader = csv.reader(stream, delimiter=spec.delimiter)
    rows = []
    linenos = []
    width = None
    for lineno, cells in enumerate(reader, start=1):
        if not cells or all(not c.strip() for c in cells):
            continue
        if width is None and not rows:
            skip = spec.header if spec.header is not None else not _is_numeric(cells)
            if skip:
                width = len(cells)
                continue
        if width is None:
            width = len(cells)
        if len(cells) != width:
            raise DataFormatError(f"ragged row: {len(cells)} cells, expected {width}", lineno)
        rows.append(parse_row(cells, lineno))
        linenos.append(lineno)
    if not rows:
        raise DataFormatError("no data rows")
    X = np.array(rows, dtype=np.float64)
    if spec.log_returns:
        if X.shape[0] < 2:
            raise DataFormatError("log returns need at least two rows")
        X = log_returns(X, linenos)
    if spec.center:
        X = center(X)
    return X
