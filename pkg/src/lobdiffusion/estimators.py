"""scikit-learn style wrappers around the codec, the diffusion model and the baseline."""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .baseline import calibrate, simulate
from .book import BookSeries
from .codec import decode_image, denormalize, unpad
from .diffusion import linear_beta_schedule
from .ingest import WindowSpec, iterate_windows
from .pipeline import build_dataset, encode_for_model, forecast_windows, generate
from .training import TrainOptions, load_checkpoint, model_from_checkpoint, save_checkpoint, train
from .unet import build_unet, preset
from .validation import check_book_series, check_grid, check_windows


class LobImageEncoder(TransformerMixin, BaseEstimator):
    """Windows of book states to normalized, square-padded ``(T, T, 2)`` grids.

    Stateless apart from the shape checks done in :meth:`fit`; per-window
    normalization parameters of the last :meth:`transform` call are kept in
    ``norm_params_`` so :meth:`inverse_transform` can decode them.
    """

    def __init__(self, history_len: int = 40, pred_len: int = 24, n_levels: int = 10, tick_size: int = 100,
                 rolling_window: Optional[int] = None, clip_quantile: float = 0.025,
                 clip_prices: bool = True, clip_sizes: bool = True):
        self.history_len = history_len
        self.pred_len = pred_len
        self.n_levels = n_levels
        self.tick_size = tick_size
        self.rolling_window = rolling_window
        self.clip_quantile = clip_quantile
        self.clip_prices = clip_prices
        self.clip_sizes = clip_sizes

    def _spec(self) -> WindowSpec:
        return WindowSpec(self.history_len, self.pred_len, self.n_levels)

    def _codec(self) -> dict:
        return {"rolling_window": self.rolling_window, "clip_quantile": self.clip_quantile,
                "clip_prices": self.clip_prices, "clip_sizes": self.clip_sizes, "tick_size": self.tick_size}

    def fit(self, X, y=None):
        spec = self._spec()
        check_windows(X, spec.T, self.n_levels)
        if 2 * self.n_levels > spec.T:
            raise ValueError(f"2n={2 * self.n_levels} rows do not fit T={spec.T}")
        self.resolution_ = spec.T
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "resolution_")
        spec = self._spec()
        encoded = [encode_for_model(w, spec, self._codec()) for w in check_windows(X, spec.T, self.n_levels)]
        self.norm_params_ = [e[1] for e in encoded]
        self.provenance_ = encoded[0][2]
        return np.stack([e[0] for e in encoded])

    def inverse_transform(self, Xt, norm_params=None) -> list[BookSeries]:
        """Decode grids back to book states (repairing invalid columns)."""
        check_is_fitted(self, "provenance_")
        grids = check_grid(Xt, self.resolution_, 2)
        norms = self.norm_params_ if norm_params is None else norm_params
        if len(norms) != len(grids):
            raise ValueError(f"{len(grids)} grids but {len(norms)} normalization records")
        return [decode_image(denormalize(unpad(g, self.provenance_, nrm)), tick_size=self.tick_size)
                for g, nrm in zip(grids, norms)]


class LobDiffusionForecaster(BaseEstimator):
    """Inpainting diffusion model that forecasts ``pred_len`` future book states.

    ``fit`` windows the stream (non-overlapping histories), encodes it and
    trains a UNet for ``epochs`` passes; ``predict`` samples futures for a
    history of at least ``history_len`` states.
    """

    def __init__(self, history_len: int = 40, pred_len: int = 24, n_levels: int = 10, tick_size: int = 100,
                 preset: str = "desk", unet_overrides: Optional[dict] = None, T_diff: int = 1000,
                 beta_start: float = 1e-4, beta_end: float = 0.02, lr: float = 1e-4, batch_size: int = 16,
                 epochs: int = 1, grad_clip: Optional[float] = 1.0, future_only: bool = False,
                 sample_steps: int = 1000, rolling_window: Optional[int] = None, clip_quantile: float = 0.025,
                 clip_prices: bool = True, clip_sizes: bool = True, random_state: int = 0):
        self.history_len = history_len
        self.pred_len = pred_len
        self.n_levels = n_levels
        self.tick_size = tick_size
        self.preset = preset
        self.unet_overrides = unet_overrides
        self.T_diff = T_diff
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.grad_clip = grad_clip
        self.future_only = future_only
        self.sample_steps = sample_steps
        self.rolling_window = rolling_window
        self.clip_quantile = clip_quantile
        self.clip_prices = clip_prices
        self.clip_sizes = clip_sizes
        self.random_state = random_state

    @property
    def spec(self) -> WindowSpec:
        return WindowSpec(self.history_len, self.pred_len, self.n_levels, self.history_len + self.pred_len)

    def _codec(self) -> dict:
        return {"rolling_window": self.rolling_window, "clip_quantile": self.clip_quantile,
                "clip_prices": self.clip_prices, "clip_sizes": self.clip_sizes, "tick_size": self.tick_size}

    def _build(self):
        cfg = preset(self.preset, **(self.unet_overrides or {}))
        if cfg.resolution != self.spec.T:
            raise ValueError(f"preset resolution {cfg.resolution} != history_len + pred_len = {self.spec.T}")
        self.schedule_ = linear_beta_schedule(self.T_diff, self.beta_start, self.beta_end)
        return build_unet(cfg, self.random_state)

    def fit(self, X, y=None):
        states = check_book_series(X, self.n_levels, min_len=self.spec.T)
        data = build_dataset(states, self.spec, self._codec())
        model = self._build()
        opts = TrainOptions(lr=self.lr, batch_size=self.batch_size, epochs=self.epochs,
                            grad_clip=self.grad_clip, future_only=self.future_only)
        result = train(model, data, opts, self.schedule_, self.history_len, rng=self.random_state)
        self.model_ = result.model
        self.loss_trace_ = result.loss_trace
        self.n_steps_ = result.step
        self.n_windows_ = len(data)
        self._optimizer, self._generator = result.optimizer, result.generator
        return self

    def predict(self, history, n_samples: int = 1, steps: Optional[int] = None,
                seeds=None) -> list[BookSeries]:
        """``n_samples`` futures for one history; seeds default to ``random_state + i``."""
        check_is_fitted(self, "model_")
        hist = check_book_series(history, self.n_levels, min_len=self.history_len)
        seeds = list(seeds) if seeds is not None else [self.random_state + i for i in range(n_samples)]
        gen = generate(self.model_, hist, self.spec, self.schedule_, steps or self.sample_steps, seeds, self._codec())
        self.last_repair_ = gen.report
        return gen.futures

    def forecast(self, states, steps: Optional[int] = None, seed: int = 0, stride: Optional[int] = None):
        """One future per evaluation window of ``states``; returns ``(futures, repair_report)``."""
        check_is_fitted(self, "model_")
        s = check_book_series(states, self.n_levels, min_len=self.spec.T)
        spec = WindowSpec(self.history_len, self.pred_len, self.n_levels, stride or self.spec.T)
        windows = iterate_windows(s, spec, "eval")
        return forecast_windows(self.model_, windows, spec, self.schedule_, steps or self.sample_steps,
                                seed, self._codec())

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        save_checkpoint(path, self.model_, getattr(self, "_optimizer", None), getattr(self, "_generator", None),
                        self.n_steps_, self.loss_trace_, {"estimator": self.get_params()})

    @classmethod
    def load(cls, path) -> "LobDiffusionForecaster":
        ckpt = load_checkpoint(path)
        params = ckpt["config"].get("estimator")
        if params is None:
            raise ValueError(f"{path} was not written by {cls.__name__}.save")
        est = cls(**params)
        est.schedule_ = linear_beta_schedule(est.T_diff, est.beta_start, est.beta_end)
        est.model_ = model_from_checkpoint(ckpt)
        est.loss_trace_ = ckpt["loss_trace"]
        est.n_steps_ = ckpt["step"]
        return est


class ContBaseline(BaseEstimator):
    """Zero-intelligence simulator; ``fit`` calibrates rates from a stream."""

    def __init__(self, depth: int = 10, tick_size: int = 100, order_size: Optional[int] = None,
                 market_share: float = 0.5, random_state: int = 0):
        self.depth = depth
        self.tick_size = tick_size
        self.order_size = order_size
        self.market_share = market_share
        self.random_state = random_state

    def fit(self, X, y=None):
        states = check_book_series(X)
        self.params_ = calibrate(states, self.depth, self.tick_size, self.order_size, self.market_share)
        self.params_.seed = self.random_state
        self.init_ = states[len(states) - 1]
        return self

    def sample(self, n_events: int = 1000, init=None) -> BookSeries:
        check_is_fitted(self, "params_")
        params = self.params_
        start = self.init_ if init is None else init
        result = simulate(params, start, n_events)
        self.last_result_ = result
        return result.states
