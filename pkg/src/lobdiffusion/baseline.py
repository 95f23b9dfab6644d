"""Cont-style zero-intelligence order book simulator.

Limit orders arrive at distance ``d = 1..D`` ticks from the opposite best
quote with intensity ``limit_rates[d - 1]`` per side, market orders arrive
at ``market_rate`` per side and every resting share is cancelled at
``cancel_rate``. The next event is drawn with probability proportional to
its intensity and the clock advances by an exponential holding time, so
emitted timestamps carry the intensity scale that :func:`calibrate` needs.
"""
from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .book import ASK_SENTINEL, BID_SENTINEL, BookLike, BookSeries, BookState, as_book_series

logger = logging.getLogger(__name__)


@dataclass
class ContParams:
    limit_rates: tuple[float, ...] = field(default_factory=lambda: tuple(1.0 / d**0.6 for d in range(1, 11)))
    market_rate: float = 0.5
    cancel_rate: float = 0.002
    order_size: int = 100
    n_levels: int = 10
    tick_size: int = 100
    seed: int = 0
    market_share: float = 0.5  # calibration only: share of best-level decrements read as market orders
    limit_sides: str = "both"  # "both", "bid" or "ask"
    market_sides: str = "both"  # "both", "buy" (lifts asks) or "sell" (hits bids)

    def __post_init__(self):
        self.limit_rates = tuple(float(r) for r in self.limit_rates)
        if any(r < 0 for r in self.limit_rates) or self.market_rate < 0 or self.cancel_rate < 0:
            raise ValueError("rates must be non-negative")
        if self.order_size < 1:
            raise ValueError("order_size must be >= 1")
        if self.n_levels < 1:
            raise ValueError("n_levels must be >= 1")
        if self.limit_sides not in ("both", "bid", "ask") or self.market_sides not in ("both", "buy", "sell"):
            raise ValueError("limit_sides must be both/bid/ask and market_sides both/buy/sell")

    @classmethod
    def power_law(cls, k: float = 1.0, gamma: float = 0.6, depth: int = 10, **kw) -> "ContParams":
        """Limit intensity ``k / d**gamma`` for ``d = 1..depth``."""
        return cls(limit_rates=tuple(k / d**gamma for d in range(1, depth + 1)), **kw)

    @property
    def depth(self) -> int:
        return len(self.limit_rates)


@dataclass
class SimulationResult:
    states: BookSeries
    emitted: int
    halted: bool
    event_counts: dict


def default_init(params: ContParams, mid: int = 1_000_000, size: Optional[int] = None) -> BookState:
    """Full ``n_levels`` one-tick ladders around ``mid`` with equal queues."""
    tick = params.tick_size
    size = 5 * params.order_size if size is None else size
    n = params.n_levels
    best_bid = mid - (mid % tick)
    asks = tuple((best_bid + tick * (i + 1), size) for i in range(n))
    bids = tuple((best_bid - tick * i, size) for i in range(n))
    return BookState(34_200.0, asks, bids)


class _Book:
    def __init__(self, init: BookState):
        self.asks: dict[int, int] = {p: s for p, s in init.asks if s > 0}
        self.bids: dict[int, int] = {p: s for p, s in init.bids if s > 0}
        self.ask_px = sorted(self.asks)
        self.bid_px = sorted(self.bids)  # ascending; best bid last

    @property
    def best_ask(self) -> int:
        return self.ask_px[0]

    @property
    def best_bid(self) -> int:
        return self.bid_px[-1]

    def add(self, side: str, price: int, qty: int):
        book, prices = (self.asks, self.ask_px) if side == "ask" else (self.bids, self.bid_px)
        if price in book:
            book[price] += qty
        else:
            book[price] = qty
            bisect.insort(prices, price)

    def remove(self, side: str, price: int, qty: int) -> int:
        book, prices = (self.asks, self.ask_px) if side == "ask" else (self.bids, self.bid_px)
        take = min(qty, book[price])
        book[price] -= take
        if book[price] == 0:
            del book[price]
            prices.pop(bisect.bisect_left(prices, price))
        return take

    def market(self, side: str, qty: int):
        """Execute against ``side``; walks the ladder while quantity remains."""
        prices = self.ask_px if side == "ask" else self.bid_px
        while qty > 0 and prices:
            best = prices[0] if side == "ask" else prices[-1]
            qty -= self.remove(side, best, qty)

    def snapshot(self, n: int, ask_px, ask_sz, bid_px, bid_sz, row: int):
        a = self.ask_px[:n]
        b = self.bid_px[::-1][:n]
        ask_px[row, : len(a)] = a
        ask_sz[row, : len(a)] = [self.asks[p] for p in a]
        bid_px[row, : len(b)] = b
        bid_sz[row, : len(b)] = [self.bids[p] for p in b]


def simulate(params: ContParams, init: BookState | None = None, horizon: int = 1000) -> SimulationResult:
    """Run ``horizon`` events, emitting the top-``n_levels`` book after each.

    The run halts early, with the emitted count reported, if either side of
    the book is emptied.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    init = default_init(params) if init is None else init
    book = _Book(init)
    if not book.ask_px or not book.bid_px:
        raise ValueError("initial book needs at least one level on each side")
    if book.best_ask <= book.best_bid:
        raise ValueError("initial book is crossed")
    rng = np.random.default_rng(params.seed)
    n, tick, q = params.n_levels, params.tick_size, params.order_size
    lam = np.asarray(params.limit_rates)
    lam_total = float(lam.sum())
    lam_cdf = np.cumsum(lam) / lam_total if lam_total > 0 else None
    mu, theta = params.market_rate, params.cancel_rate
    lam_bid = lam_total if params.limit_sides in ("both", "bid") else 0.0
    lam_ask = lam_total if params.limit_sides in ("both", "ask") else 0.0
    mu_sell = mu if params.market_sides in ("both", "sell") else 0.0
    mu_buy = mu if params.market_sides in ("both", "buy") else 0.0
    depth = len(lam)

    ask_px = np.full((horizon, n), ASK_SENTINEL, dtype=np.int64)
    bid_px = np.full((horizon, n), BID_SENTINEL, dtype=np.int64)
    ask_sz = np.zeros((horizon, n), dtype=np.int64)
    bid_sz = np.zeros((horizon, n), dtype=np.int64)
    times = np.empty(horizon)
    counts = {"limit": 0, "market": 0, "cancel": 0}

    # draws in blocks to amortise generator overhead
    block = 65536
    uniforms = rng.random((block, 3))
    expo = rng.standard_exponential(block)
    j = 0
    clock = init.timestamp
    emitted = 0
    halted = False
    for step in range(horizon):
        if j == block:
            uniforms = rng.random((block, 3))
            expo = rng.standard_exponential(block)
            j = 0
        u_type, u_level, u_side = uniforms[j]
        wait = expo[j]
        j += 1
        shares_ask = sum(book.asks.values())
        shares_bid = sum(book.bids.values())
        rates = (lam_bid, lam_ask, mu_sell, mu_buy, theta * shares_ask, theta * shares_bid)
        total = sum(rates)
        if total <= 0:
            halted = True
            break
        clock += wait / total
        x = u_type * total
        if x < rates[0]:
            d = min(int(np.searchsorted(lam_cdf, u_level, side="right")) + 1, depth)
            book.add("bid", book.best_ask - d * tick, q)
            counts["limit"] += 1
        elif x < rates[0] + rates[1]:
            d = min(int(np.searchsorted(lam_cdf, u_level, side="right")) + 1, depth)
            book.add("ask", book.best_bid + d * tick, q)
            counts["limit"] += 1
        elif x < rates[0] + rates[1] + rates[2]:
            book.market("bid", q)  # sell market order hits bids
            counts["market"] += 1
        elif x < rates[0] + rates[1] + rates[2] + rates[3]:
            book.market("ask", q)
            counts["market"] += 1
        else:
            side = "ask" if x < total - rates[5] else "bid"
            levels = book.ask_px if side == "ask" else book.bid_px
            sizes = book.asks if side == "ask" else book.bids
            target = u_side * (shares_ask if side == "ask" else shares_bid)
            acc = 0
            for price in levels:
                acc += sizes[price]
                if acc > target:
                    break
            book.remove(side, price, q)
            counts["cancel"] += 1
        if not book.ask_px or not book.bid_px:
            halted = True
            break
        book.snapshot(n, ask_px, ask_sz, bid_px, bid_sz, step)
        times[step] = clock
        emitted += 1
    if halted:
        logger.warning("simulation halted after %d of %d events: one side emptied", emitted, horizon)
    states = BookSeries(
        ask_px[:emitted], ask_sz[:emitted], bid_px[:emitted], bid_sz[:emitted], times[:emitted],
        validate=False,
    )
    return SimulationResult(states, emitted, halted, counts)


def calibrate(
    states: BookLike,
    depth: int = 10,
    tick_size: int = 100,
    order_size: int | None = None,
    market_share: float = 0.5,
    min_states: int = 1000,
) -> ContParams:
    """Coarse moment-matching fit of :class:`ContParams` to a Level-2 stream.

    Size increments are read as limit arrivals, bucketed by distance (ticks)
    to the opposite best quote of the previous state. Decrements at the best
    quote are split between market orders and cancellations by
    ``market_share``; deeper decrements are cancellations. Rates are per
    side per unit of time, where time is the timestamp span of the stream
    (the event count if timestamps are constant).
    """
    s = as_book_series(states)
    if len(s) < min_states:
        raise ValueError(f"need at least {min_states} states to calibrate, got {len(s)}")
    n = s.n_levels
    limit_counts = np.zeros(depth)
    increments = []
    best_decrements = 0
    deep_decrements = 0
    shares_time = 0.0
    ts = s.timestamps
    span = float(ts[-1] - ts[0])
    use_events = not span > 0
    elapsed = float(len(s) - 1) if use_events else span

    for t in range(1, len(s)):
        dt = 1.0 if use_events else ts[t] - ts[t - 1]
        prev_ask_best = s.ask_px[t - 1, 0]
        prev_bid_best = s.bid_px[t - 1, 0]
        shares_time += float(s.ask_sz[t - 1].sum() + s.bid_sz[t - 1].sum()) * dt
        for side, px, sz, opp, best_prev in (
            ("bid", s.bid_px, s.bid_sz, prev_ask_best, prev_bid_best),
            ("ask", s.ask_px, s.ask_sz, prev_bid_best, prev_ask_best),
        ):
            before = {int(p): int(q) for p, q in zip(px[t - 1], sz[t - 1]) if q > 0}
            after = {int(p): int(q) for p, q in zip(px[t], sz[t]) if q > 0}
            if not before and not after:
                continue
            # prices beyond the shallower view can enter or leave through truncation
            full_b, full_a = len(before) == n, len(after) == n
            if side == "bid":
                floor = max(min(before) if full_b else -np.inf, min(after) if full_a else -np.inf)
                visible = lambda p: p >= floor
            else:
                cap = min(max(before) if full_b else np.inf, max(after) if full_a else np.inf)
                visible = lambda p: p <= cap
            for p in set(before) | set(after):
                if not visible(p):
                    continue
                delta = after.get(p, 0) - before.get(p, 0)
                if delta > 0:
                    d = abs(opp - p) // tick_size
                    increments.append(delta)
                    if 1 <= d <= depth:
                        limit_counts[d - 1] += 1
                elif delta < 0:
                    if p == best_prev:
                        best_decrements += 1
                    else:
                        deep_decrements += 1

    limit_rates = limit_counts / (2 * elapsed)
    market_rate = market_share * best_decrements / (2 * elapsed)
    cancels = (1 - market_share) * best_decrements + deep_decrements
    cancel_rate = cancels / shares_time if shares_time > 0 else 0.0
    if order_size is None:
        order_size = int(np.median(increments)) if increments else 1
    return ContParams(
        limit_rates=tuple(limit_rates), market_rate=float(market_rate), cancel_rate=float(cancel_rate),
        order_size=max(1, order_size), n_levels=n, tick_size=tick_size, market_share=market_share,
    )
