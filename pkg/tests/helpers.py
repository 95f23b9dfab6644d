"""Shared generators for the test suite."""
from contextlib import contextmanager

import numpy as np

from lobdiffusion.book import BookSeries


def random_window(rng: np.random.Generator, T: int, n: int) -> BookSeries:
    """Valid random window with gaps, spread changes and occasional absent deep levels."""
    best_bid = 1_000_000 + 100 * np.cumsum(rng.integers(-2, 3, T))
    spread = rng.integers(1, 4, T)
    ask_gaps = rng.integers(1, 3, (T, n))
    bid_gaps = rng.integers(1, 3, (T, n))
    ask_gaps[:, 0] = spread
    bid_gaps[:, 0] = 0
    ask_px = best_bid[:, None] + 100 * np.cumsum(ask_gaps, axis=1)
    bid_px = best_bid[:, None] - 100 * np.cumsum(bid_gaps, axis=1)
    ask_sz = rng.integers(1, 500, (T, n))
    bid_sz = rng.integers(1, 500, (T, n))
    # drop a tail of levels now and then
    for sz in (ask_sz, bid_sz):
        cut = rng.integers(1, n + 1, T)
        cut[rng.random(T) < 0.8] = n
        cut[0] = n
        sz[np.arange(n)[None, :] >= cut[:, None]] = 0
    return BookSeries(ask_px, ask_sz, bid_px, bid_sz, 34200.0 + np.arange(T) * 0.25)


TINY_OVERRIDES = dict(resolution=16, block_channels=(8, 8), attention_at=(1,), norm_groups=4, time_embed_dim=8)


def assert_inpaint_contract(sampled, history_grid, history_len):
    """History columns carried over bit for bit; nothing leaks into the future."""
    import torch

    from lobdiffusion.codec import build_inpaint_input

    sampled = torch.as_tensor(sampled)
    hist = torch.as_tensor(history_grid, dtype=sampled.dtype)
    if hist.ndim == 3:
        hist = hist.expand(sampled.shape[0], *hist.shape)
    assert torch.equal(sampled[:, :, :history_len], hist[:, :, :history_len])
    ctx = build_inpaint_input(hist, hist, history_len)
    assert (ctx.history[:, :, history_len:] == 0).all()
    assert (ctx.mask[..., :history_len] == 0).all() and (ctx.mask[..., history_len:] == 1).all()


ACCEPTANCE: dict[int, tuple[str, str]] = {}


@contextmanager
def criterion(number: int, title: str):
    """Record PASS or FAIL for one acceptance criterion; failures still raise."""
    notes: list[str] = []
    try:
        yield notes
    except BaseException as exc:
        detail = f"{title}; {'; '.join(notes + [str(exc).splitlines()[0] if str(exc) else type(exc).__name__])}"
        ACCEPTANCE[number] = ("FAIL", detail)
        print(f"criterion {number}: FAIL  {detail}")
        raise
    ACCEPTANCE[number] = ("PASS", f"{title}; {'; '.join(notes)}" if notes else title)
    print(f"criterion {number}: PASS  {ACCEPTANCE[number][1]}")
