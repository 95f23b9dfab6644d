"""Order book <-> image conversion.

Layout of a :class:`LobImage` (``2n`` rows by ``T`` columns, two channels):

* column ``t`` is book state ``t`` of the window;
* row 0 is the deepest bid, row ``n - 1`` the best bid, row ``n`` the best
  ask and row ``2n - 1`` the deepest ask, so price grows with the row index;
* the size channel holds bid sizes as positive and ask sizes as negative
  numbers.

Square model inputs are ``(T, T, C)`` grids indexed ``[row, column, channel]``.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .book import ASK_SENTINEL, BID_SENTINEL, BookLike, BookSeries, as_book_series

logger = logging.getLogger(__name__)

_MAGIC = b"LOBIMG\x00\x01"


@dataclass
class NormParams:
    mid0: float
    price_std: np.ndarray
    size_std: np.ndarray
    price_clip: tuple[float, float]
    size_clip: tuple[float, float]
    rolling_window: Optional[int] = None
    history_len: Optional[int] = None
    tick_size: int = 1
    flat_price: bool = False
    flat_size: bool = False

    def __post_init__(self):
        self.price_std = np.asarray(self.price_std, dtype=np.float64)
        self.size_std = np.asarray(self.size_std, dtype=np.float64)
        if (self.price_std <= 0).any() or (self.size_std <= 0).any():
            raise ValueError("standard deviations must be positive")
        for lo, hi in (self.price_clip, self.size_clip):
            if not lo < hi:
                raise ValueError(f"clip bounds must satisfy lo < hi, got ({lo}, {hi})")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["price_std"] = self.price_std.tolist()
        d["size_std"] = self.size_std.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NormParams":
        d = dict(d)
        d["price_clip"] = tuple(d["price_clip"])
        d["size_clip"] = tuple(d["size_clip"])
        return cls(**d)


@dataclass
class LobImage:
    prices: np.ndarray
    sizes: np.ndarray
    norm: Optional[NormParams] = None
    timestamps: Optional[np.ndarray] = None

    def __post_init__(self):
        self.prices = np.asarray(self.prices, dtype=np.float64)
        self.sizes = np.asarray(self.sizes, dtype=np.float64)
        if self.prices.shape != self.sizes.shape or self.prices.ndim != 2:
            raise ValueError("prices and sizes must be 2-D grids of equal shape")
        if self.prices.shape[0] % 2:
            raise ValueError("an image needs an even number of rows (2n)")

    @property
    def n_levels(self) -> int:
        return self.prices.shape[0] // 2

    @property
    def n_cols(self) -> int:
        return self.prices.shape[1]

    @property
    def normalized(self) -> bool:
        return self.norm is not None

    def channels(self) -> np.ndarray:
        """Stack as a ``(2n, T, 2)`` array."""
        return np.stack([self.prices, self.sizes], axis=-1)


@dataclass
class InpaintInput:
    stacked: object  # (..., T, T, 5) ndarray or tensor

    @property
    def noised(self):
        return self.stacked[..., 0:2]

    @property
    def history(self):
        return self.stacked[..., 2:4]

    @property
    def mask(self):
        return self.stacked[..., 4]

    @property
    def context(self):
        return self.stacked[..., 2:5]


@dataclass
class RepairReport:
    n_columns: int = 0
    repaired_columns: int = 0
    sign: int = 0
    holes: int = 0
    order: int = 0
    crossed: int = 0
    column_flags: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool), repr=False)

    @property
    def repair_rate(self) -> float:
        return self.repaired_columns / self.n_columns if self.n_columns else 0.0

    def merge(self, other: "RepairReport") -> "RepairReport":
        return RepairReport(
            self.n_columns + other.n_columns,
            self.repaired_columns + other.repaired_columns,
            self.sign + other.sign,
            self.holes + other.holes,
            self.order + other.order,
            self.crossed + other.crossed,
            np.concatenate([self.column_flags, other.column_flags]),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("column_flags")
        d["repair_rate"] = self.repair_rate
        return d


def encode_window(window: BookLike, n_levels: int | None = None, T: int | None = None) -> LobImage:
    """Lay a window of book states out as a raw (unnormalized) image."""
    series = as_book_series(window)
    if T is not None and len(series) != T:
        raise ValueError(f"window has {len(series)} states, expected T={T}")
    n = series.n_levels
    if n_levels is not None and n_levels != n:
        if n_levels > n:
            raise ValueError(f"window carries {n} levels, cannot encode {n_levels}")
        series = BookSeries(
            series.ask_px[:, :n_levels], series.ask_sz[:, :n_levels],
            series.bid_px[:, :n_levels], series.bid_sz[:, :n_levels],
            series.timestamps, validate=False,
        )
        n = n_levels
    prices = np.concatenate([series.bid_px[:, ::-1], series.ask_px], axis=1).T
    sizes = np.concatenate([series.bid_sz[:, ::-1], -series.ask_sz], axis=1).T
    return LobImage(prices.astype(np.float64), sizes.astype(np.float64), None, series.timestamps.copy())


def _present(img: LobImage) -> np.ndarray:
    return img.sizes != 0


def _column_std(values: np.ndarray, present: np.ndarray, h: int, rolling: Optional[int], rms: bool):
    """One std per column, estimated from history columns only."""
    T = values.shape[1]

    def est(cols: slice) -> float:
        v = values[:, cols][present[:, cols]]
        if v.size == 0:
            return 0.0
        return float(np.sqrt(np.mean(v**2))) if rms else float(np.std(v))

    if rolling is None:
        out = np.full(T, est(slice(0, h)))
    else:
        out = np.empty(T)
        for t in range(h):
            out[t] = est(slice(max(0, t - rolling + 1), t + 1))
        out[h:] = out[h - 1]
    flat = bool((out <= 0).any())
    out[out <= 0] = 1.0
    return out, flat


def _clip_bounds(values: np.ndarray, present: np.ndarray, h: int, q: float) -> tuple[float, float]:
    v = values[:, :h][present[:, :h]]
    if v.size == 0:
        return -1.0, 1.0
    lo, hi = np.quantile(v, [q, 1.0 - q])
    if not lo < hi:
        lo, hi = lo - 0.5, hi + 0.5
    return float(lo), float(hi)


def normalize(
    img: LobImage,
    rolling_window: Optional[int] = None,
    history_len: Optional[int] = None,
    clip_quantile: float = 0.025,
    clip_prices: bool = True,
    clip_sizes: bool = True,
    tick_size: int = 1,
) -> LobImage:
    """Centre prices on the first mid, scale both channels and clip outliers.

    Scale and clip statistics come from the first ``history_len`` columns
    (all columns by default) so a window can be normalized identically at
    training time and when only its history is known. Size scale is the RMS
    of the signed sizes. Clip bounds are the ``clip_quantile`` and
    ``1 - clip_quantile`` quantiles of the normalized present cells. Absent
    levels (size 0) are excluded from all statistics and their price cells
    are set to the nearest clip bound.
    """
    if img.normalized:
        raise ValueError("image is already normalized")
    n, T = img.n_levels, img.n_cols
    h = T if history_len is None else int(history_len)
    if not 1 <= h <= T:
        raise ValueError(f"history_len must be within [1, {T}]")
    present = _present(img)
    if not (present[n - 1, 0] and present[n, 0]):
        raise ValueError("first column needs a best bid and a best ask to compute mid(t0)")
    mid0 = (img.prices[n - 1, 0] + img.prices[n, 0]) / 2.0

    centred = img.prices - mid0
    price_std, flat_p = _column_std(centred, present, h, rolling_window, rms=False)
    size_std, flat_s = _column_std(img.sizes, present, h, rolling_window, rms=True)
    prices = centred / price_std
    sizes = img.sizes / size_std

    p_lo, p_hi = _clip_bounds(prices, present, h, clip_quantile)
    s_lo, s_hi = _clip_bounds(sizes, present, h, clip_quantile)
    if clip_prices:
        prices = np.clip(prices, p_lo, p_hi)
    if clip_sizes:
        sizes = np.clip(sizes, s_lo, s_hi)
    prices[:n][~present[:n]] = p_lo
    prices[n:][~present[n:]] = p_hi
    if flat_p or flat_s:
        logger.debug("flat window: falling back to unit std (price=%s, size=%s)", flat_p, flat_s)
    norm = NormParams(
        mid0=float(mid0), price_std=price_std, size_std=size_std,
        price_clip=(p_lo, p_hi), size_clip=(s_lo, s_hi),
        rolling_window=rolling_window, history_len=h, tick_size=int(tick_size),
        flat_price=flat_p, flat_size=flat_s,
    )
    return LobImage(prices, sizes, norm, img.timestamps)


def denormalize(img: LobImage) -> LobImage:
    """Undo :func:`normalize` (clipping excepted), snapping to the tick grid.

    Sizes are rounded to integers with the sign convention kept; wrong-sign
    cells are left for :func:`decode_image` to repair.
    """
    if img.norm is None:
        raise ValueError("image carries no NormParams; nothing to invert")
    norm = img.norm
    tick = norm.tick_size
    prices = img.prices * norm.price_std + norm.mid0
    prices = np.round(prices / tick) * tick
    sizes = np.round(img.sizes * norm.size_std)
    sizes[sizes == 0] = 0.0  # drop negative zeros
    return LobImage(prices, sizes, None, img.timestamps)


def decode_image(
    img: LobImage, tick_size: int | None = None, return_report: bool = False
):
    """Rebuild book states from a raw-unit image, repairing invalid columns.

    Repairs, each counted in the :class:`RepairReport`: wrong-sign sizes are
    zeroed; absent levels above a present one get size 1; prices are sorted
    within the bid and ask blocks and pushed at least one tick apart; a
    crossed column has its two blocks moved apart symmetrically.
    """
    if img.norm is not None:
        raise ValueError("decode expects raw units; call denormalize first")
    if tick_size is None:
        tick_size = 1
    n, T = img.n_levels, img.n_cols
    rows = np.arange(n)

    bid_px = np.round(img.prices[:n][::-1].T).astype(np.int64)  # (T, n), level 1 first
    ask_px = np.round(img.prices[n:].T).astype(np.int64)
    bid_raw = np.round(img.sizes[:n][::-1].T).astype(np.int64)
    ask_raw = -np.round(img.sizes[n:].T).astype(np.int64)

    sign_bad = (bid_raw < 0).sum(axis=1) + (ask_raw < 0).sum(axis=1)
    bid_sz = np.maximum(bid_raw, 0)
    ask_sz = np.maximum(ask_raw, 0)

    def fill_holes(sz):
        present = sz > 0
        depth = np.where(present.any(axis=1), n - np.argmax(present[:, ::-1], axis=1), 0)
        inside = rows[None, :] < depth[:, None]
        hole = inside & ~present
        return np.where(hole, 1, sz), hole.sum(axis=1), depth

    bid_sz, bid_holes, bid_depth = fill_holes(bid_sz)
    ask_sz, ask_holes, ask_depth = fill_holes(ask_sz)

    def order_asks(px, depth):
        live = rows[None, :] < depth[:, None]
        key = np.where(live, px, np.iinfo(np.int64).max)
        srt = np.sort(key, axis=1)
        strict = np.maximum.accumulate(srt - rows * tick_size, axis=1) + rows * tick_size
        strict = np.where(live, strict, px)
        changed = (live & (strict != px)).any(axis=1)
        return strict, changed

    def order_bids(px, depth):
        neg, changed = order_asks(-px, depth)
        return -neg, changed

    ask_px, ask_fix = order_asks(ask_px, ask_depth)
    bid_px, bid_fix = order_bids(bid_px, bid_depth)

    both = (ask_depth > 0) & (bid_depth > 0)
    gap = np.where(both, np.maximum((bid_px[:, 0] - ask_px[:, 0]) // tick_size + 1, 0), 0)
    crossed = gap > 0
    down = gap // 2
    up = gap - down
    bid_px = bid_px - (down * tick_size)[:, None] * (bid_depth[:, None] > rows)
    ask_px = ask_px + (up * tick_size)[:, None] * (ask_depth[:, None] > rows)

    report = RepairReport(n_columns=T)
    report.sign = int(sign_bad.sum())
    report.holes = int((bid_holes + ask_holes).sum())
    report.order = int(bid_fix.sum() + ask_fix.sum())
    report.crossed = int(crossed.sum())
    flags = (sign_bad > 0) | (bid_holes > 0) | (ask_holes > 0) | bid_fix | ask_fix | crossed
    report.column_flags = flags
    report.repaired_columns = int(flags.sum())
    if report.repaired_columns:
        logger.debug("decode repaired %d of %d columns", report.repaired_columns, T)

    ask_px = np.where(ask_sz > 0, ask_px, ASK_SENTINEL)
    bid_px = np.where(bid_sz > 0, bid_px, BID_SENTINEL)
    ts = img.timestamps if img.timestamps is not None else None
    series = BookSeries(ask_px, ask_sz, bid_px, bid_sz, ts, validate=True)
    if return_report:
        return series, report
    return series


def pad_provenance(n_rows: int, T: int) -> np.ndarray:
    """Source row of each of the ``T`` padded rows.

    Every row is repeated ``T // n_rows`` times and the ``T % n_rows``
    leftover slots go to the rows closest to the bid/ask boundary.
    """
    if n_rows > T:
        raise ValueError(f"{n_rows} image rows do not fit a resolution of {T}")
    k, r = divmod(T, n_rows)
    centre = (n_rows - 1) / 2.0
    by_centrality = np.argsort(np.abs(np.arange(n_rows) - centre), kind="stable")
    counts = np.full(n_rows, k)
    counts[by_centrality[:r]] += 1
    return np.repeat(np.arange(n_rows), counts)


def pad_to_square(img: LobImage, T: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Repeat rows until the image is ``T x T``; returns ``(grid, provenance)``."""
    T = img.n_cols if T is None else T
    if img.n_cols != T:
        raise ValueError(f"image has {img.n_cols} columns, expected {T}")
    prov = pad_provenance(2 * img.n_levels, T)
    return img.channels()[prov], prov


def unpad_grid(square: np.ndarray, provenance: np.ndarray) -> np.ndarray:
    """Average repeated rows of a ``(..., T, T, C)`` grid back to ``(..., 2n, T, C)``."""
    provenance = np.asarray(provenance)
    if square.shape[-3] != len(provenance):
        raise ValueError(f"grid has {square.shape[-3]} rows, provenance has {len(provenance)}")
    n_rows = int(provenance.max()) + 1
    if not np.array_equal(np.unique(provenance), np.arange(n_rows)):
        raise ValueError("provenance does not cover every source row")
    counts = np.bincount(provenance, minlength=n_rows)
    moved = np.moveaxis(square, -3, 0)
    sums = np.zeros((n_rows,) + moved.shape[1:], dtype=np.float64)
    np.add.at(sums, provenance, moved)
    means = sums / counts.reshape((-1,) + (1,) * (sums.ndim - 1))
    return np.moveaxis(means, 0, -3)


def unpad(square: np.ndarray, provenance: np.ndarray, norm: NormParams | None = None,
          timestamps: np.ndarray | None = None) -> LobImage:
    square = np.asarray(square)
    if square.ndim != 3 or square.shape[-1] != 2:
        raise ValueError(f"expected a (T, T, 2) grid, got {square.shape}")
    rows = unpad_grid(square, provenance)
    return LobImage(rows[..., 0], rows[..., 1], norm, timestamps)


def build_inpaint_input(square, noised, history_len: int) -> InpaintInput:
    """Stack noised image, masked clean history and the future mask.

    Works on numpy arrays and torch tensors of shape ``(..., T, T, 2)``;
    columns (axis -2) at or beyond ``history_len`` are the future.
    """
    if square.shape != noised.shape:
        raise ValueError(f"shape mismatch: {tuple(square.shape)} vs {tuple(noised.shape)}")
    T = square.shape[-2]
    if not 0 <= history_len < T:
        raise ValueError(f"history_len must be in [0, {T}), got {history_len}")
    if isinstance(square, np.ndarray):
        future = np.zeros(square.shape[:-1] + (1,), dtype=bool)
        future[..., history_len:, :] = True
        context = np.where(future, 0.0, square).astype(square.dtype)
        return InpaintInput(np.concatenate([noised, context, future.astype(square.dtype)], axis=-1))
    import torch

    future = torch.zeros(square.shape[:-1] + (1,), dtype=torch.bool, device=square.device)
    future[..., history_len:, :] = True
    context = torch.where(future, torch.zeros((), dtype=square.dtype), square)
    return InpaintInput(torch.cat([noised, context, future.to(square.dtype)], dim=-1))


def save_lob_image(img: LobImage, path) -> None:
    """Binary container: magic, ``<II`` shape, float64 prices then sizes, JSON metadata."""
    rows, cols = img.prices.shape
    meta = {
        "norm": img.norm.to_dict() if img.norm is not None else None,
        "timestamps": img.timestamps.tolist() if img.timestamps is not None else None,
    }
    blob = json.dumps(meta).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", rows, cols))
        fh.write(np.ascontiguousarray(img.prices, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(img.sizes, dtype="<f8").tobytes())
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)


def load_lob_image(path) -> LobImage:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path} is not a LobImage file")
        rows, cols = struct.unpack("<II", fh.read(8))
        count = rows * cols
        prices = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(rows, cols)
        sizes = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(rows, cols)
        (length,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(length))
    norm = NormParams.from_dict(meta["norm"]) if meta["norm"] is not None else None
    ts = np.asarray(meta["timestamps"]) if meta["timestamps"] is not None else None
    return LobImage(prices.copy(), sizes.copy(), norm, ts)


def dump_lob_image_csv(img: LobImage, path) -> None:
    """Lossless text dump: one line per (channel, row) with ``repr`` floats."""
    with open(path, "w") as fh:
        fh.write("channel,row," + ",".join(f"t{t}" for t in range(img.n_cols)) + "\n")
        for name, grid in (("price", img.prices), ("size", img.sizes)):
            for r, values in enumerate(grid):
                fh.write(f"{name},{r}," + ",".join(repr(float(v)) for v in values) + "\n")

