"""Level-2 order book data model.

A :class:`BookState` is one snapshot of the top ``n`` levels on each side.
Long streams are held in a :class:`BookSeries`, a columnar container that
behaves like a read-only sequence of ``BookState`` but keeps prices and sizes
in ``int64`` arrays so that metrics, encoding and validation stay vectorised.

Prices are integers in the LOBSTER convention (1e-4 currency units). A level
with size 0 is *absent* and carries the sentinel price of its side.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, Sequence, Union, overload

import numpy as np

ASK_SENTINEL = 9_999_999_999
BID_SENTINEL = -9_999_999_999


class BookValidationError(ValueError):
    """An order book state violates the resting-book invariants."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class LevelQuote(NamedTuple):
    price: int
    size: int

    @property
    def absent(self) -> bool:
        return self.size == 0


@dataclass(frozen=True)
class BookState:
    timestamp: float
    asks: tuple[LevelQuote, ...]
    bids: tuple[LevelQuote, ...]

    def __post_init__(self):
        object.__setattr__(self, "asks", tuple(LevelQuote(int(p), int(s)) for p, s in self.asks))
        object.__setattr__(self, "bids", tuple(LevelQuote(int(p), int(s)) for p, s in self.bids))

    @property
    def n_levels(self) -> int:
        return len(self.asks)

    @property
    def best_ask(self) -> LevelQuote:
        return self.asks[0]

    @property
    def best_bid(self) -> LevelQuote:
        return self.bids[0]

    @property
    def mid(self) -> float:
        return (self.asks[0].price + self.bids[0].price) / 2


def _canonical(prices: np.ndarray, sizes: np.ndarray, sentinel: int) -> np.ndarray:
    return np.where(sizes == 0, sentinel, prices)


def validation_errors(
    ask_px: np.ndarray, ask_sz: np.ndarray, bid_px: np.ndarray, bid_sz: np.ndarray
) -> list[tuple[int, str]]:
    """Return ``(row, reason)`` for every state breaking the book invariants.

    Checks: non-negative sizes, no absent level above a present one, strictly
    monotone prices among present levels and no crossed best quotes.
    """
    errors: list[tuple[int, str]] = []
    n = ask_px.shape[1]

    def flag(mask: np.ndarray, reason: str):
        for row in np.flatnonzero(mask):
            errors.append((int(row), reason))

    flag((ask_sz < 0).any(axis=1) | (bid_sz < 0).any(axis=1), "negative size")
    for side, px, sz, sign in (("ask", ask_px, ask_sz, 1), ("bid", bid_px, bid_sz, -1)):
        present = sz > 0
        if n > 1:
            hole = ~present[:, :-1] & present[:, 1:]
            flag(hole.any(axis=1), f"absent {side} level above a present one")
            both = present[:, :-1] & present[:, 1:]
            bad = both & (sign * (px[:, 1:] - px[:, :-1]) <= 0)
            order = "ascending" if sign > 0 else "descending"
            flag(bad.any(axis=1), f"{side} prices not strictly {order}")
    crossed = (ask_sz[:, 0] > 0) & (bid_sz[:, 0] > 0) & (ask_px[:, 0] <= bid_px[:, 0])
    flag(crossed, "crossed book (best ask <= best bid)")
    errors.sort()
    return errors


class BookSeries(Sequence[BookState]):
    """Columnar sequence of book states.

    Parameters
    ----------
    ask_px, ask_sz, bid_px, bid_sz : array-like of shape (N, n)
        Level 1 is column 0 on both sides.
    timestamps : array-like of shape (N,), optional
        Seconds after midnight. Defaults to the row index.
    """

    def __init__(self, ask_px, ask_sz, bid_px, bid_sz, timestamps=None, validate: bool = True):
        ask_sz = np.asarray(ask_sz, dtype=np.int64)
        bid_sz = np.asarray(bid_sz, dtype=np.int64)
        ask_px = np.asarray(ask_px, dtype=np.int64)
        bid_px = np.asarray(bid_px, dtype=np.int64)
        shapes = {a.shape for a in (ask_px, ask_sz, bid_px, bid_sz)}
        if len(shapes) != 1 or ask_px.ndim != 2:
            raise ValueError(f"price/size arrays must share one (N, n) shape, got {shapes}")
        self.ask_px = _canonical(ask_px, ask_sz, ASK_SENTINEL)
        self.bid_px = _canonical(bid_px, bid_sz, BID_SENTINEL)
        self.ask_sz = ask_sz
        self.bid_sz = bid_sz
        if timestamps is None:
            timestamps = np.arange(len(ask_px), dtype=np.float64)
        self.timestamps = np.asarray(timestamps, dtype=np.float64)
        if self.timestamps.shape != (len(ask_px),):
            raise ValueError("timestamps must have one entry per state")
        for a in (self.ask_px, self.bid_px, self.ask_sz, self.bid_sz, self.timestamps):
            a.setflags(write=False)
        if validate:
            errors = validation_errors(self.ask_px, self.ask_sz, self.bid_px, self.bid_sz)
            if errors:
                row, reason = errors[0]
                raise BookValidationError(reason, row=row)

    @property
    def n_levels(self) -> int:
        return self.ask_px.shape[1]

    def __len__(self) -> int:
        return len(self.ask_px)

    @overload
    def __getitem__(self, idx: int) -> BookState: ...

    @overload
    def __getitem__(self, idx: slice) -> "BookSeries": ...

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return self.take(np.arange(len(self))[idx])
        if isinstance(idx, (int, np.integer)):
            i = int(idx)
            if i < 0:
                i += len(self)
            if not 0 <= i < len(self):
                raise IndexError(idx)
            return BookState(
                float(self.timestamps[i]),
                tuple(zip(self.ask_px[i].tolist(), self.ask_sz[i].tolist())),
                tuple(zip(self.bid_px[i].tolist(), self.bid_sz[i].tolist())),
            )
        return self.take(np.asarray(idx))

    def __iter__(self) -> Iterator[BookState]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, BookSeries):
            return NotImplemented
        return all(
            np.array_equal(a, b)
            for a, b in (
                (self.ask_px, other.ask_px),
                (self.ask_sz, other.ask_sz),
                (self.bid_px, other.bid_px),
                (self.bid_sz, other.bid_sz),
                (self.timestamps, other.timestamps),
            )
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"BookSeries(n_states={len(self)}, n_levels={self.n_levels})"

    def take(self, indices) -> "BookSeries":
        indices = np.asarray(indices, dtype=np.int64)
        return BookSeries(
            self.ask_px[indices],
            self.ask_sz[indices],
            self.bid_px[indices],
            self.bid_sz[indices],
            self.timestamps[indices],
            validate=False,
        )

    def same_book(self, other: "BookSeries") -> bool:
        """Compare prices and sizes, ignoring timestamps."""
        return (
            len(self) == len(other)
            and np.array_equal(self.ask_px, other.ask_px)
            and np.array_equal(self.ask_sz, other.ask_sz)
            and np.array_equal(self.bid_px, other.bid_px)
            and np.array_equal(self.bid_sz, other.bid_sz)
        )

    @classmethod
    def from_states(cls, states: Iterable[BookState], validate: bool = True) -> "BookSeries":
        states = list(states)
        if not states:
            raise ValueError("cannot build a BookSeries from zero states; use BookSeries.empty")
        n = states[0].n_levels
        if any(len(s.asks) != n or len(s.bids) != n for s in states):
            raise ValueError("every state must carry the same number of levels per side")
        asks = np.array([s.asks for s in states], dtype=np.int64).reshape(len(states), n, 2)
        bids = np.array([s.bids for s in states], dtype=np.int64).reshape(len(states), n, 2)
        return cls(
            asks[..., 0], asks[..., 1], bids[..., 0], bids[..., 1],
            [s.timestamp for s in states], validate=validate,
        )

    @classmethod
    def empty(cls, n_levels: int) -> "BookSeries":
        z = np.zeros((0, n_levels), dtype=np.int64)
        return cls(z, z, z, z, np.zeros(0))

    @classmethod
    def concat(cls, parts: Sequence["BookSeries"]) -> "BookSeries":
        if not parts:
            raise ValueError("nothing to concatenate")
        return cls(
            np.concatenate([p.ask_px for p in parts]),
            np.concatenate([p.ask_sz for p in parts]),
            np.concatenate([p.bid_px for p in parts]),
            np.concatenate([p.bid_sz for p in parts]),
            np.concatenate([p.timestamps for p in parts]),
            validate=False,
        )

    def mid(self) -> np.ndarray:
        """Mid price per state; NaN where a best quote is absent."""
        ok = (self.ask_sz[:, 0] > 0) & (self.bid_sz[:, 0] > 0)
        mid = (self.ask_px[:, 0] + self.bid_px[:, 0]) / 2.0
        return np.where(ok, mid, np.nan)


BookLike = Union[BookSeries, Sequence[BookState]]


def as_book_series(states: BookLike, validate: bool = False) -> BookSeries:
    """Coerce a sequence of :class:`BookState` into a :class:`BookSeries`."""
    if isinstance(states, BookSeries):
        return states
    states = list(states)
    if not states:
        raise ValueError("empty state sequence")
    return BookSeries.from_states(states, validate=validate)
