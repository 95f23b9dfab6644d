"""Input checks shared by the estimators and the CLI."""
from __future__ import annotations

from typing import Optional

import numpy as np

from .book import BookSeries, BookValidationError, as_book_series, validation_errors


def check_book_series(X, n_levels: Optional[int] = None, min_len: int = 1, validate: bool = True) -> BookSeries:
    """Coerce ``X`` to a :class:`BookSeries` and check its size and invariants."""
    series = as_book_series(X)
    if len(series) < min_len:
        raise ValueError(f"need at least {min_len} book states, got {len(series)}")
    if n_levels is not None and series.n_levels < n_levels:
        raise ValueError(f"states carry {series.n_levels} levels, {n_levels} required")
    if validate:
        errors = validation_errors(series.ask_px, series.ask_sz, series.bid_px, series.bid_sz)
        if errors:
            row, reason = errors[0]
            raise BookValidationError(reason, row=row)
    if n_levels is not None and series.n_levels > n_levels:
        series = BookSeries(
            series.ask_px[:, :n_levels], series.ask_sz[:, :n_levels],
            series.bid_px[:, :n_levels], series.bid_sz[:, :n_levels],
            series.timestamps, validate=False,
        )
    return series


def check_windows(X, T: int, n_levels: Optional[int] = None) -> list[BookSeries]:
    """Accept one window or a list of windows, each exactly ``T`` states long."""
    if isinstance(X, BookSeries):
        X = [X]
    windows = [check_book_series(w, n_levels) for w in X]
    bad = [i for i, w in enumerate(windows) if len(w) != T]
    if bad:
        raise ValueError(f"windows {bad[:5]} do not have T={T} states")
    return windows


def check_grid(x, T: int, channels: int, batched: bool = True) -> np.ndarray:
    """Check a channels-last ``(B, T, T, C)`` (or unbatched ``(T, T, C)``) array."""
    arr = np.asarray(x)
    expected = (T, T, channels)
    shape = arr.shape[1:] if batched else arr.shape
    if arr.ndim != (4 if batched else 3) or tuple(shape) != expected:
        raise ValueError(f"expected grid of shape {'(B, ) + ' if batched else ''}{expected}, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("grid contains non-finite values")
    return arr
