"""Distributional comparison of generated and real order book sequences.

Score functions map a sequence of book states to a :class:`ScoreSeries`.
Two empirical score distributions are compared with a histogram L1 distance
and the 1-D Wasserstein-1 distance, each with a percentile bootstrap
confidence interval.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Sequence

import numpy as np

from .book import BookLike, BookSeries, as_book_series

logger = logging.getLogger(__name__)


@dataclass
class ScoreSeries:
    name: str
    values: np.ndarray
    skipped: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.isfinite(self.values).all():
            raise ValueError(f"score series {self.name!r} contains non-finite values")

    def __len__(self) -> int:
        return len(self.values)


def _both_best(series: BookSeries) -> np.ndarray:
    return (series.ask_sz[:, 0] > 0) & (series.bid_sz[:, 0] > 0)


def spread(states: BookLike, tick_size: int = 1) -> ScoreSeries:
    """Best ask minus best bid, in ticks. States missing a best quote are skipped."""
    s = as_book_series(states)
    ok = _both_best(s)
    values = (s.ask_px[ok, 0] - s.bid_px[ok, 0]) / tick_size
    return ScoreSeries("spread", values, skipped=int((~ok).sum()))


def mid_returns(states: BookLike, lag: int = 1, tick_size: int = 1) -> ScoreSeries:
    """Arithmetic mid-price change over ``lag`` states, in ticks."""
    s = as_book_series(states)
    if len(s) <= lag:
        return ScoreSeries("mid_returns", [])
    mid = s.mid()
    diff = (mid[lag:] - mid[:-lag]) / tick_size
    ok = np.isfinite(diff)
    return ScoreSeries("mid_returns", diff[ok], skipped=int((~ok).sum()))


def _check_depth(s: BookSeries, depth: int):
    if not 1 <= depth <= s.n_levels:
        raise ValueError(f"depth {depth} not in [1, {s.n_levels}]")


def book_imbalance(states: BookLike, depth: int = 1) -> ScoreSeries:
    """``(bid - ask) / (bid + ask)`` resting size over the top ``depth`` levels."""
    s = as_book_series(states)
    _check_depth(s, depth)
    bid = s.bid_sz[:, :depth].sum(axis=1).astype(np.float64)
    ask = s.ask_sz[:, :depth].sum(axis=1).astype(np.float64)
    tot = bid + ask
    ok = tot > 0
    return ScoreSeries("imbalance", (bid[ok] - ask[ok]) / tot[ok], skipped=int((~ok).sum()))


def ofi(states: BookLike, depth: int = 1) -> ScoreSeries:
    """Order flow imbalance per transition, summed over the top ``depth`` levels.

    At each level the bid contributes the new size if its price rose, the
    size change if unchanged and minus the old size if it fell; the ask side
    mirrors this with the inequalities reversed and enters with a minus sign.
    """
    s = as_book_series(states)
    _check_depth(s, depth)
    if len(s) < 2:
        return ScoreSeries("ofi", [])
    bp, bq = s.bid_px[:, :depth], s.bid_sz[:, :depth].astype(np.float64)
    ap, aq = s.ask_px[:, :depth], s.ask_sz[:, :depth].astype(np.float64)
    e_bid = (bp[1:] >= bp[:-1]) * bq[1:] - (bp[1:] <= bp[:-1]) * bq[:-1]
    e_ask = (ap[1:] <= ap[:-1]) * aq[1:] - (ap[1:] >= ap[:-1]) * aq[:-1]
    return ScoreSeries("ofi", (e_bid - e_ask).sum(axis=1))


def volume_at_level(states: BookLike, level: int = 1, side: Literal["bid", "ask"] = "bid") -> ScoreSeries:
    """Resting size at a 1-based level; absent levels count as 0."""
    s = as_book_series(states)
    _check_depth(s, level)
    if side not in ("bid", "ask"):
        raise ValueError("side must be 'bid' or 'ask'")
    sz = s.bid_sz if side == "bid" else s.ask_sz
    return ScoreSeries(f"{side}_volume_{level}", sz[:, level - 1])


def _values(x) -> np.ndarray:
    v = x.values if isinstance(x, ScoreSeries) else np.asarray(x, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot compare an empty score series")
    return v


def histograms(real, gen, bins: int = 50):
    """Normalized histograms of both samples on shared edges from the pooled range."""
    r, g = _values(real), _values(gen)
    lo = min(r.min(), g.min())
    hi = max(r.max(), g.max())
    if lo == hi:
        edges = np.array([lo - 0.5, hi + 0.5])
    else:
        edges = np.linspace(lo, hi, bins + 1)
    p = np.histogram(r, edges)[0] / len(r)
    q = np.histogram(g, edges)[0] / len(g)
    return edges, p, q


def l1_distance(real, gen, bins: int = 50) -> float:
    """Sum of absolute differences between normalized histograms, in [0, 2]."""
    _, p, q = histograms(real, gen, bins)
    return float(np.abs(p - q).sum())


def wasserstein1(real, gen) -> float:
    """Wasserstein-1 distance between two 1-D empirical distributions.

    Integrates ``|F^-1(u) - G^-1(u)|`` over ``u`` in (0, 1), both quantile
    functions being step functions of the sorted samples.
    """
    r = np.sort(_values(real))
    g = np.sort(_values(gen))
    n, m = len(r), len(g)
    u = np.union1d(np.arange(1, n + 1) / n, np.arange(1, m + 1) / m)
    u[-1] = 1.0
    widths = np.diff(np.concatenate([[0.0], u]))
    # quantile index of the interval ending at u: smallest i with (i+1)/n >= u
    mid = u - widths / 2
    qr = r[np.minimum(np.ceil(mid * n).astype(np.int64) - 1, n - 1)]
    qg = g[np.minimum(np.ceil(mid * m).astype(np.int64) - 1, m - 1)]
    return float(np.sum(widths * np.abs(qr - qg)))


DISTANCES: dict[str, Callable] = {"l1": l1_distance, "wasserstein": wasserstein1}


def bootstrap_draws(metric: Callable, real, gen, resamples: int = 1000, rng=None) -> np.ndarray:
    r, g = _values(real), _values(gen)
    rng = np.random.default_rng(rng)
    out = np.empty(resamples)
    for b in range(resamples):
        out[b] = metric(r[rng.integers(0, len(r), len(r))], g[rng.integers(0, len(g), len(g))])
    return out


def bootstrap_ci(metric: Callable, real, gen, resamples: int = 1000, level: float = 0.95, rng=None):
    """Percentile bootstrap interval, resampling both series with replacement.

    The interval is widened if needed so that it contains the point estimate.
    """
    if resamples < 100:
        raise ValueError("use at least 100 bootstrap resamples")
    draws = bootstrap_draws(metric, real, gen, resamples, rng)
    point = metric(_values(real), _values(gen))
    return _percentile_interval(draws, level, point)


def _percentile_interval(draws, level, point):
    a = (1 - level) / 2
    lo, hi = np.quantile(draws, [a, 1 - a])
    return float(min(lo, point)), float(max(hi, point))


METRIC_NAMES = ("spread", "mid_returns", "imbalance", "bid_volume_1", "ask_volume_1", "ofi")


@dataclass
class EvalConfig:
    metrics: Sequence[str] = METRIC_NAMES
    bins: int = 50
    resamples: int = 1000
    level: float = 0.95
    seed: int = 0
    imbalance_depth: int = 1
    ofi_depth: int = 1
    return_lag: int = 1
    tick_size: int = 1
    condition_buckets: Optional[int] = None


def score(states: BookSeries, name: str, cfg: EvalConfig) -> ScoreSeries:
    if name == "spread":
        return spread(states, cfg.tick_size)
    if name == "mid_returns":
        return mid_returns(states, cfg.return_lag, cfg.tick_size)
    if name == "imbalance":
        return book_imbalance(states, cfg.imbalance_depth)
    if name == "ofi":
        return ofi(states, cfg.ofi_depth)
    for side in ("bid", "ask"):
        prefix = f"{side}_volume_"
        if name.startswith(prefix):
            return volume_at_level(states, int(name[len(prefix):]), side)
    raise ValueError(f"unknown metric {name!r}")


def _segments(states) -> list[BookSeries]:
    if isinstance(states, BookSeries):
        return [states]
    states = list(states)
    if states and isinstance(states[0], BookSeries):
        return states
    return [as_book_series(states)]


def _bucketed(seg: BookSeries, name: str, cfg: EvalConfig) -> list[tuple[str, np.ndarray]]:
    """Score values grouped by position within the segment."""
    values = score(seg, name, cfg).values
    if not cfg.condition_buckets:
        return [(name, values)]
    edges = np.linspace(0, len(values), cfg.condition_buckets + 1).astype(int)
    return [(f"{name}@{b}", values[edges[b] : edges[b + 1]]) for b in range(cfg.condition_buckets)]


@dataclass
class MetricEntry:
    name: str
    l1: float
    l1_ci: tuple[float, float]
    wasserstein: float
    wasserstein_ci: tuple[float, float]
    n_real: int
    n_gen: int
    edges: np.ndarray = field(repr=False, default=None)
    real_hist: np.ndarray = field(repr=False, default=None)
    gen_hist: np.ndarray = field(repr=False, default=None)

    def distance(self, loss_type: str) -> float:
        return self.l1 if loss_type == "l1" else self.wasserstein

    def ci(self, loss_type: str) -> tuple[float, float]:
        return self.l1_ci if loss_type == "l1" else self.wasserstein_ci


@dataclass
class MetricReport:
    entries: dict[str, MetricEntry]
    missing: dict[str, str]
    mean_l1: float
    mean_l1_ci: tuple[float, float]
    mean_wasserstein: float
    mean_wasserstein_ci: tuple[float, float]
    config: dict = field(default_factory=dict)

    def mean(self, loss_type: str) -> float:
        return self.mean_l1 if loss_type == "l1" else self.mean_wasserstein

    def mean_ci(self, loss_type: str) -> tuple[float, float]:
        return self.mean_l1_ci if loss_type == "l1" else self.mean_wasserstein_ci

    def to_dict(self) -> dict:
        return {
            "metrics": {
                name: {
                    "l1": e.l1, "l1_ci": list(e.l1_ci),
                    "wasserstein": e.wasserstein, "wasserstein_ci": list(e.wasserstein_ci),
                    "n_real": e.n_real, "n_gen": e.n_gen,
                }
                for name, e in self.entries.items()
            },
            "missing": self.missing,
            "summary": {
                "mean_l1": self.mean_l1, "mean_l1_ci": list(self.mean_l1_ci),
                "mean_wasserstein": self.mean_wasserstein,
                "mean_wasserstein_ci": list(self.mean_wasserstein_ci),
            },
            "config": self.config,
        }

    def rows(self):
        """Flat ``(metric, loss_type, value, ci_low, ci_high)`` rows."""
        for name, e in self.entries.items():
            for lt in ("l1", "wasserstein"):
                lo, hi = e.ci(lt)
                yield name, lt, e.distance(lt), lo, hi
        for lt in ("l1", "wasserstein"):
            lo, hi = self.mean_ci(lt)
            yield "mean", lt, self.mean(lt), lo, hi

    def write(self, json_path=None, csv_path=None, hist_path=None) -> None:
        if json_path:
            with open(json_path, "w") as fh:
                json.dump(self.to_dict(), fh, indent=2)
        if csv_path:
            with open(csv_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["metric", "loss_type", "value", "ci_low", "ci_high"])
                w.writerows(self.rows())
        if hist_path:
            with open(hist_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["metric", "bin_lo", "bin_hi", "real_p", "gen_p"])
                for name, e in self.entries.items():
                    for lo, hi, p, q in zip(e.edges[:-1], e.edges[1:], e.real_hist, e.gen_hist):
                        w.writerow([name, lo, hi, p, q])


def evaluate(real_states, gen_states, cfg: EvalConfig | None = None) -> MetricReport:
    """Score both inputs and compare every configured metric.

    Inputs are a single sequence of states or a list of :class:`BookSeries`
    segments; transition scores never straddle a segment boundary. Bootstrap
    resample ``b`` uses the same seed for every metric, so the summary
    interval is the percentile interval of the per-resample metric means.
    """
    cfg = cfg or EvalConfig()
    real_segs, gen_segs = _segments(real_states), _segments(gen_states)
    if not real_segs or not gen_segs or not len(real_segs[0]) or not len(gen_segs[0]):
        raise ValueError("both real and generated inputs must be non-empty")

    entries: dict[str, MetricEntry] = {}
    missing: dict[str, str] = {}
    draws: dict[str, dict[str, np.ndarray]] = {}
    for name in cfg.metrics:
        try:
            groups_r = [_bucketed(s, name, cfg) for s in real_segs]
            groups_g = [_bucketed(s, name, cfg) for s in gen_segs]
        except Exception as exc:  # recorded, report still produced
            missing[name] = f"{type(exc).__name__}: {exc}"
            continue
        for k, (key, _) in enumerate(groups_r[0]):
            r = np.concatenate([grp[k][1] for grp in groups_r])
            g = np.concatenate([grp[k][1] for grp in groups_g])
            if r.size == 0 or g.size == 0:
                missing[key] = "empty score series"
                continue
            edges, p, q = histograms(r, g, cfg.bins)
            per = {}
            cis = {}
            points = {}
            for lt, fn in DISTANCES.items():
                dist = (lambda a, b, fn=fn: fn(a, b, cfg.bins)) if lt == "l1" else fn
                points[lt] = dist(r, g)
                per[lt] = bootstrap_draws(dist, r, g, cfg.resamples, cfg.seed)
                cis[lt] = _percentile_interval(per[lt], cfg.level, points[lt])
            draws[key] = per
            entries[key] = MetricEntry(
                key, points["l1"], cis["l1"], points["wasserstein"], cis["wasserstein"],
                len(r), len(g), edges, p, q,
            )
    if not entries:
        raise ValueError(f"no metric could be computed: {missing}")
    means, mean_cis = {}, {}
    for lt in DISTANCES:
        means[lt] = float(np.mean([e.distance(lt) for e in entries.values()]))
        stacked = np.mean([draws[k][lt] for k in entries], axis=0)
        mean_cis[lt] = _percentile_interval(stacked, cfg.level, means[lt])
    for name, reason in missing.items():
        logger.warning("metric %s missing: %s", name, reason)
    return MetricReport(
        entries, missing, means["l1"], mean_cis["l1"], means["wasserstein"], mean_cis["wasserstein"],
        config={k: (list(v) if isinstance(v, (list, tuple)) else v) for k, v in cfg.__dict__.items()},
    )
