"""Reading and writing LOBSTER-style orderbook CSV files and windowing streams."""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from os import PathLike
from typing import Literal

import numpy as np

from .book import BookLike, BookSeries, BookValidationError, as_book_series, validation_errors

TRADING_OPEN = 9.5 * 3600
TRADING_CLOSE = 16.0 * 3600


class OrderbookFormatError(ValueError):
    """A row of an orderbook file cannot be parsed."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class WindowSpec:
    history_len: int
    pred_len: int
    n_levels: int = 10
    stride: int = 1

    def __post_init__(self):
        if self.history_len < 1 or self.pred_len < 1:
            raise ValueError("history_len and pred_len must be positive")
        if self.n_levels < 1:
            raise ValueError("n_levels must be >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    @property
    def T(self) -> int:
        return self.history_len + self.pred_len


def _parse_int(token: str) -> int:
    try:
        return int(token)
    except ValueError:
        value = float(token)
        if not value.is_integer():
            raise
        return int(value)


def _read_rows(path, n_levels: int) -> np.ndarray:
    width = 4 * n_levels
    rows = []
    with open(path, newline="") as fh:
        for lineno, fields in enumerate(csv.reader(fh), start=1):
            if not fields or all(not f.strip() for f in fields):
                continue
            if len(fields) != width:
                raise OrderbookFormatError(
                    f"expected {width} columns for {n_levels} levels, got {len(fields)}", row=lineno
                )
            try:
                rows.append([_parse_int(f) for f in fields])
            except ValueError:
                raise OrderbookFormatError(f"non-numeric field in {fields!r}", row=lineno) from None
    if not rows:
        return np.zeros((0, width), dtype=np.int64)
    return np.asarray(rows, dtype=np.int64)


def read_timestamps(path) -> np.ndarray:
    """Read times from the first column of a timestamp or LOBSTER message file."""
    times = []
    with open(path, newline="") as fh:
        for lineno, fields in enumerate(csv.reader(fh), start=1):
            if not fields:
                continue
            try:
                times.append(float(fields[0]))
            except ValueError:
                raise OrderbookFormatError(f"bad timestamp {fields[0]!r}", row=lineno) from None
    return np.asarray(times, dtype=np.float64)


def _split_columns(raw: np.ndarray, n_levels: int):
    cols = raw.reshape(len(raw), n_levels, 4)
    return cols[..., 0], cols[..., 1], cols[..., 2], cols[..., 3]


def scan_orderbook_file(path, n_levels: int, timestamps_path=None):
    """Parse a file without raising on invariant violations.

    Returns
    -------
    series : BookSeries
        All rows, unvalidated.
    violations : list of (row, reason)
        1-based row numbers of states that break the book invariants.
    """
    raw = _read_rows(path, n_levels)
    times = None
    if timestamps_path is not None:
        times = read_timestamps(timestamps_path)
        if len(times) != len(raw):
            raise OrderbookFormatError(
                f"timestamp file has {len(times)} rows but orderbook has {len(raw)}"
            )
    ask_px, ask_sz, bid_px, bid_sz = _split_columns(raw, n_levels)
    violations = [
        (row + 1, reason) for row, reason in validation_errors(ask_px, ask_sz, bid_px, bid_sz)
    ]
    series = BookSeries(ask_px, ask_sz, bid_px, bid_sz, times, validate=False)
    return series, violations


def parse_orderbook_file(path: str | PathLike, n_levels: int, timestamps_path=None) -> BookSeries:
    """Parse a headerless ``4 * n_levels`` column orderbook CSV.

    Column order per level is ask price, ask size, bid price, bid size. Rows
    are numbered from 1 in error messages. Without a timestamp file the
    timestamps are the 0-based row index.
    """
    series, violations = scan_orderbook_file(path, n_levels, timestamps_path)
    if violations:
        row, reason = violations[0]
        raise BookValidationError(reason, row=row)
    return series


def write_orderbook_file(states: BookLike, path, timestamps_path=None) -> None:
    series = as_book_series(states)
    n = series.n_levels
    out = np.empty((len(series), n, 4), dtype=np.int64)
    out[..., 0] = series.ask_px
    out[..., 1] = series.ask_sz
    out[..., 2] = series.bid_px
    out[..., 3] = series.bid_sz
    np.savetxt(path, out.reshape(len(series), 4 * n), fmt="%d", delimiter=",")
    if timestamps_path is not None:
        np.savetxt(timestamps_path, series.timestamps, fmt="%.9f")


def _seconds(value) -> float:
    if isinstance(value, dt.time):
        return value.hour * 3600 + value.minute * 60 + value.second + value.microsecond / 1e6
    return float(value)


def restrict_trading_hours(states: BookLike, open=TRADING_OPEN, close=TRADING_CLOSE) -> BookSeries:
    """Keep states with ``open <= timestamp < close``.

    ``open`` and ``close`` are seconds after midnight or :class:`datetime.time`.
    """
    series = as_book_series(states)
    ts = series.timestamps
    keep = (ts >= _seconds(open)) & (ts < _seconds(close))
    return series.take(np.flatnonzero(keep))


def window_starts(n_states: int, spec: WindowSpec, mode: Literal["train", "eval"] = "train") -> np.ndarray:
    if mode == "train":
        stride = spec.history_len
    elif mode == "eval":
        stride = spec.stride
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if n_states < spec.T:
        return np.zeros(0, dtype=np.int64)
    return np.arange(0, n_states - spec.T + 1, stride, dtype=np.int64)


def iterate_windows(states: BookLike, spec: WindowSpec, mode: Literal["train", "eval"] = "train") -> list[BookSeries]:
    """Cut a stream into windows of ``spec.T`` consecutive states.

    Training windows advance by the full history length so every example
    carries fresh history; evaluation windows advance by ``spec.stride``.
    A trailing partial window is dropped.
    """
    series = as_book_series(states)
    return [series[s : s + spec.T] for s in window_starts(len(series), spec, mode)]
