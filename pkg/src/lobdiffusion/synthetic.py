"""Seeded synthetic Level-2 streams for tests and desk-scale experiments.

Regimes
-------
``constant``
    One book repeated.
``walk``
    Dense one-tick ladder; best bid follows a lazy +-1 tick random walk, the
    spread alternates between 1 and 2 ticks, sizes are AR(1) around a mean
    that grows with depth.
``large_tick``
    Intel-like: one-tick spread, mid frozen for geometrically distributed run
    lengths (mean 500 events), deep slowly varying queues.
``small_tick``
    Alphabet-like: wide and variable spread, frequent multi-tick moves,
    ladders with gaps, small fast-moving queues.

All prices are LOBSTER integers with a tick of ``TICK`` units; timestamps
start at the 09:30 open with exponential gaps.
"""
from __future__ import annotations

import numpy as np
from scipy.signal import lfilter

from .book import BookSeries

TICK = 100
BASE_PRICE = 1_000_000
REGIMES = ("constant", "walk", "large_tick", "small_tick")


def _ar1(rng, shape, mean, sigma, phi) -> np.ndarray:
    """AR(1) paths along axis 0 started at their mean, rounded and floored at 1."""
    N, n = shape
    mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), (n,))
    drive = (1 - phi) * mean + sigma * rng.standard_normal(shape)
    zi = (phi * mean)[None, :]
    y, _ = lfilter([1.0], [1.0, -phi], drive, axis=0, zi=zi)
    return np.maximum(np.round(y), 1).astype(np.int64)


def _hold(rng, N: int, p_change: float, draw) -> np.ndarray:
    """Piecewise-constant sequence that redraws with probability ``p_change``."""
    change = rng.random(N) < p_change
    change[0] = True
    values = draw(int(change.sum()))
    return values[np.cumsum(change) - 1]


def _timestamps(rng, N: int, mean_gap: float = 0.01) -> np.ndarray:
    gaps = rng.exponential(mean_gap, N)
    gaps[0] = 0.0
    return 34_200.0 + np.cumsum(gaps)


def _ladder(best_bid, spread_ticks, n, gaps=None):
    """Price ladders from the best bid, spread and optional per-level gaps (ticks)."""
    N = len(best_bid)
    if gaps is None:
        offs = np.broadcast_to(np.arange(n), (N, n))
    else:
        offs = np.concatenate([np.zeros((N, 1), dtype=np.int64), np.cumsum(gaps, axis=1)], axis=1)
    best_ask = best_bid + spread_ticks * TICK
    asks = best_ask[:, None] + offs * TICK
    bids = best_bid[:, None] - offs * TICK
    return asks, bids


def gen_stream(regime: str, length: int, n: int = 10, seed: int = 0) -> BookSeries:
    """Generate ``length`` valid book states of the given regime."""
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}; choose from {REGIMES}")
    if length < 1:
        raise ValueError("length must be >= 1")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    N = length
    depth = np.arange(n)

    if regime == "constant":
        bb = np.full(N, BASE_PRICE, dtype=np.int64)
        asks, bids = _ladder(bb, np.ones(N, dtype=np.int64), n)
        sz = np.broadcast_to(100 + 20 * depth, (N, n))
        return BookSeries(asks, sz, bids, sz.copy(), _timestamps(rng, N))

    if regime == "walk":
        u = rng.random(N)
        step = np.where(u < 0.025, -1, np.where(u < 0.05, 1, 0))
        step[0] = 0
        bb = BASE_PRICE + TICK * np.cumsum(step)
        spread = 1 + (np.cumsum(rng.random(N) < 0.02) % 2)
        asks, bids = _ladder(bb, spread, n)
        mean = 100 + 25 * depth
        ask_sz = _ar1(rng, (N, n), mean, 10.0, 0.98)
        bid_sz = _ar1(rng, (N, n), mean, 10.0, 0.98)

    elif regime == "large_tick":
        move = rng.random(N) < 1 / 500
        move[0] = False
        step = np.where(move, rng.choice([-1, 1], N), 0)
        bb = BASE_PRICE + TICK * np.cumsum(step)
        asks, bids = _ladder(bb, np.ones(N, dtype=np.int64), n)
        mean = 2000 + 500 * depth
        ask_sz = _ar1(rng, (N, n), mean, 60.0, 0.995)
        bid_sz = _ar1(rng, (N, n), mean, 60.0, 0.995)

    else:  # small_tick
        u = rng.random(N)
        size = rng.integers(1, 4, N)
        step = np.where(u < 0.15, -size, np.where(u < 0.3, size, 0))
        step[0] = 0
        bb = BASE_PRICE + TICK * np.cumsum(step)
        spread = _hold(rng, N, 0.1, lambda k: rng.geometric(0.4, k))
        gap_width = max(n - 1, 0)
        ask_gaps = np.stack(
            [_hold(rng, N, 0.02, lambda k: rng.geometric(0.6, k)) for _ in range(gap_width)], axis=1
        ) if gap_width else None
        bid_gaps = np.stack(
            [_hold(rng, N, 0.02, lambda k: rng.geometric(0.6, k)) for _ in range(gap_width)], axis=1
        ) if gap_width else None
        asks, _ = _ladder(bb, spread, n, ask_gaps)
        _, bids = _ladder(bb, spread, n, bid_gaps)
        mean = 50 + 10 * depth
        ask_sz = _ar1(rng, (N, n), mean, 8.0, 0.95)
        bid_sz = _ar1(rng, (N, n), mean, 8.0, 0.95)

    return BookSeries(asks, ask_sz, bids, bid_sz, _timestamps(rng, N))
