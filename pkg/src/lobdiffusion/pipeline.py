"""Glue between book windows, model-ready grids and decoded futures."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from .book import BookLike, BookSeries, as_book_series
from .codec import (
    LobImage, NormParams, RepairReport, decode_image, denormalize, encode_window, normalize,
    pad_to_square, unpad,
)
from .diffusion import DiffusionSchedule, make_generator, sample
from .ingest import WindowSpec, iterate_windows
from .validation import check_book_series


def _codec_kwargs(opts: Optional[dict]) -> dict:
    opts = dict(opts or {})
    allowed = {"rolling_window", "clip_quantile", "clip_prices", "clip_sizes", "tick_size"}
    unknown = set(opts) - allowed
    if unknown:
        raise ValueError(f"unknown codec options {sorted(unknown)}")
    return opts


def encode_for_model(window: BookLike, spec: WindowSpec, codec: Optional[dict] = None):
    """Normalized ``(T, T, 2)`` grid of a full window, with its norm and provenance."""
    img = encode_window(window, spec.n_levels, spec.T)
    img = normalize(img, history_len=spec.history_len, **_codec_kwargs(codec))
    grid, prov = pad_to_square(img, spec.T)
    return grid, img.norm, prov


def build_dataset(states: BookLike, spec: WindowSpec, codec: Optional[dict] = None, mode: str = "train") -> np.ndarray:
    """Every window of ``states`` as a float32 ``(N, T, T, 2)`` array."""
    windows = iterate_windows(states, spec, mode)
    if not windows:
        raise ValueError(f"{len(as_book_series(states))} states yield no window of length {spec.T}")
    return np.stack([encode_for_model(w, spec, codec)[0] for w in windows]).astype(np.float32)


def _future_timestamps(history: BookSeries, count: int) -> np.ndarray:
    ts = history.timestamps
    gap = float(np.mean(np.diff(ts))) if len(ts) > 1 else 1.0
    return ts[-1] + gap * np.arange(1, count + 1)


def encode_history(history: BookLike, spec: WindowSpec, codec: Optional[dict] = None):
    """Encode the last ``history_len`` states; future columns hold a placeholder.

    The placeholder repeats the last history state. Normalization statistics
    only look at history columns and the sampler masks the future, so the
    placeholder never reaches the model.
    """
    hist = check_book_series(history, spec.n_levels, validate=False)
    if len(hist) < spec.history_len:
        raise ValueError(f"history has {len(hist)} states, history_len is {spec.history_len}")
    hist = hist[len(hist) - spec.history_len :]
    filler = hist.take(np.full(spec.pred_len, len(hist) - 1))
    filler = BookSeries(filler.ask_px, filler.ask_sz, filler.bid_px, filler.bid_sz,
                        _future_timestamps(hist, spec.pred_len), validate=False)
    grid, norm, prov = encode_for_model(BookSeries.concat([hist, filler]), spec, codec)
    return grid, norm, prov, hist


def decode_future(grid: np.ndarray, prov: np.ndarray, norm: NormParams, spec: WindowSpec,
                  history: BookSeries) -> tuple[BookSeries, RepairReport]:
    """Decode the future columns of one sampled grid into book states."""
    img = unpad(np.asarray(grid, dtype=np.float64), prov)
    h = spec.history_len
    fut_norm = dataclasses.replace(norm, price_std=norm.price_std[h:], size_std=norm.size_std[h:])
    fut = LobImage(img.prices[:, h:], img.sizes[:, h:], fut_norm, _future_timestamps(history, spec.pred_len))
    return decode_image(denormalize(fut), tick_size=norm.tick_size, return_report=True)


@dataclass
class Generation:
    history: BookSeries
    futures: list[BookSeries]
    reports: list[RepairReport]
    seeds: list[int]
    grids: np.ndarray = field(repr=False, default=None)

    @property
    def report(self) -> RepairReport:
        total = self.reports[0]
        for r in self.reports[1:]:
            total = total.merge(r)
        return total

    def sequences(self) -> list[BookSeries]:
        """History followed by each generated future."""
        return [BookSeries.concat([self.history, f]) for f in self.futures]


def generate(model, history: BookLike, spec: WindowSpec, sched: DiffusionSchedule, steps: int,
             seeds: Sequence[int], codec: Optional[dict] = None) -> Generation:
    """Sample one future per seed for a single history and decode them."""
    grid, norm, prov, hist = encode_history(history, spec, codec)
    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(grid, dtype=dtype)
    out = sample(model, x, spec.history_len, steps, sched, rng=[int(s) for s in seeds],
                 n_samples=len(seeds)).numpy()
    decoded = [decode_future(g, prov, norm, spec, hist) for g in out]
    return Generation(hist, [d[0] for d in decoded], [d[1] for d in decoded], list(map(int, seeds)), out)


def _noise_fill(grids: np.ndarray, seeds, history_len: int) -> np.ndarray:
    out = np.array(grids, dtype=np.float64)
    for i, s in enumerate(seeds):
        noise = torch.randn(out.shape[1:], generator=make_generator(int(s)), dtype=torch.float64).numpy()
        out[i, :, history_len:] = noise[:, history_len:]
    return out


def noise_generate(history: BookLike, spec: WindowSpec, seeds: Sequence[int],
                   codec: Optional[dict] = None) -> Generation:
    """Reference generator: fill the future with unit Gaussian noise, then decode."""
    grid, norm, prov, hist = encode_history(history, spec, codec)
    out = _noise_fill(np.repeat(grid[None], len(seeds), axis=0), seeds, spec.history_len)
    decoded = [decode_future(g, prov, norm, spec, hist) for g in out]
    return Generation(hist, [d[0] for d in decoded], [d[1] for d in decoded], list(map(int, seeds)), out)


def forecast_windows(model, windows: Sequence[BookSeries], spec: WindowSpec, sched: DiffusionSchedule,
                     steps: int, seed: int = 0, codec: Optional[dict] = None, batch_size: int = 8):
    """One sampled future per window, batched; window ``i`` uses seed ``seed + i``.

    Returns the generated futures and the merged repair report. With
    ``model=None`` the pure-noise generator is used instead.
    """
    encoded = [encode_history(w[: spec.history_len], spec, codec) for w in windows]
    futures: list[BookSeries] = []
    report: Optional[RepairReport] = None
    for start in range(0, len(encoded), batch_size):
        chunk = encoded[start : start + batch_size]
        seeds = [seed + start + i for i in range(len(chunk))]
        grids = np.stack([c[0] for c in chunk])
        if model is None:
            out = _noise_fill(grids, seeds, spec.history_len)
        else:
            dtype = next(model.parameters()).dtype
            out = sample(model, torch.as_tensor(grids, dtype=dtype), spec.history_len, steps, sched,
                         rng=seeds).numpy()
        for g, (_, norm, prov, hist) in zip(out, chunk):
            fut, rep = decode_future(g, prov, norm, spec, hist)
            futures.append(fut)
            report = rep if report is None else report.merge(rep)
    return futures, report


def true_futures(windows: Sequence[BookSeries], spec: WindowSpec) -> list[BookSeries]:
    return [w[spec.history_len :] for w in windows]
