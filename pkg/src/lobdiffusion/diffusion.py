"""DDPM noise schedule, forward noising, training objective and inpainting sampler.

Timesteps are 1-based: ``t = 1`` is the least noisy step and ``t = T_diff``
is (almost) pure noise. Image tensors are channels-last, ``(B, T, T, C)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np
import torch

from .codec import build_inpaint_input

NoisePredictor = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]
RngLike = Union[int, torch.Generator, None]


class NumericalError(RuntimeError):
    """Raised when sampling or training produces non-finite values."""


def make_generator(rng: RngLike) -> torch.Generator:
    if isinstance(rng, torch.Generator):
        return rng
    g = torch.Generator()
    g.manual_seed(0 if rng is None else int(rng))
    return g


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step coefficients indexed by position ``k`` in :attr:`timesteps`.

    For the full schedule ``timesteps == 1..T_diff``; a strided
    :class:`SubSchedule` keeps a subset with each step's ``alpha`` recomputed
    from the ratio of consecutive cumulative products.
    """

    timesteps: np.ndarray
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    alpha_bars_prev: np.ndarray
    posterior_vars: np.ndarray

    @property
    def T_diff(self) -> int:
        return int(self.timesteps[-1])

    def __len__(self) -> int:
        return len(self.timesteps)

    def position(self, t: int) -> int:
        k = int(np.searchsorted(self.timesteps, t))
        if k >= len(self.timesteps) or self.timesteps[k] != t:
            raise ValueError(f"timestep {t} is not part of this schedule")
        return k

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[self.position(t)])

    @classmethod
    def from_alpha_bars(cls, timesteps, alpha_bars) -> "DiffusionSchedule":
        timesteps = np.asarray(timesteps, dtype=np.int64)
        alpha_bars = np.asarray(alpha_bars, dtype=np.float64)
        prev = np.concatenate([[1.0], alpha_bars[:-1]])
        alphas = alpha_bars / prev
        betas = 1.0 - alphas
        post = betas * (1.0 - prev) / (1.0 - alpha_bars)
        return cls(timesteps, betas, alphas, alpha_bars, prev, post)

    def to_dict(self) -> dict:
        return {"T_diff": self.T_diff, "betas": self.betas.tolist()}


@dataclass(frozen=True)
class SubSchedule(DiffusionSchedule):
    """A strided subset of a parent schedule used for fast sampling."""


def linear_beta_schedule(T_diff: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> DiffusionSchedule:
    if T_diff < 1:
        raise ValueError("T_diff must be >= 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    betas = np.linspace(beta_start, beta_end, T_diff, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    prev = np.concatenate([[1.0], alpha_bars[:-1]])
    post = betas * (1.0 - prev) / (1.0 - alpha_bars)
    return DiffusionSchedule(np.arange(1, T_diff + 1), betas, alphas, alpha_bars, prev, post)


def make_subschedule(sched: DiffusionSchedule, steps: int) -> SubSchedule:
    """Evenly strided ``steps``-element subset that always ends at ``T_diff``."""
    T_diff = sched.T_diff
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if steps > T_diff:
        raise ValueError(f"steps={steps} exceeds T_diff={T_diff}")
    sel = np.ceil(np.arange(1, steps + 1) * T_diff / steps).astype(np.int64)
    ab = sched.alpha_bars[[sched.position(int(t)) for t in sel]]
    base = DiffusionSchedule.from_alpha_bars(sel, ab)
    return SubSchedule(**base.__dict__)


def _coef(values: np.ndarray, index, like: torch.Tensor) -> torch.Tensor:
    c = torch.as_tensor(np.asarray(values)[index], dtype=like.dtype, device=like.device)
    return c.reshape(c.shape + (1,) * (like.ndim - c.ndim))


def _positions(sched: DiffusionSchedule, t) -> np.ndarray:
    t_arr = np.atleast_1d(np.asarray(t.cpu() if torch.is_tensor(t) else t, dtype=np.int64))
    if (t_arr < 1).any() or (t_arr > sched.T_diff).any():
        raise ValueError(f"timestep out of range [1, {sched.T_diff}]: {t_arr}")
    return np.array([sched.position(int(v)) for v in t_arr])


def q_sample(x0: torch.Tensor, t, eps: torch.Tensor, sched: DiffusionSchedule) -> torch.Tensor:
    """Closed-form forward marginal ``sqrt(ab_t) x0 + sqrt(1 - ab_t) eps``.

    ``t`` is an int or one timestep per leading batch element.
    """
    if x0.shape != eps.shape:
        raise ValueError("x0 and eps must have the same shape")
    pos = _positions(sched, t)
    if np.ndim(t) == 0 and not (torch.is_tensor(t) and t.ndim > 0):
        ab = torch.as_tensor(sched.alpha_bars[pos[0]], dtype=x0.dtype)
    else:
        ab = _coef(sched.alpha_bars, pos, x0)
    return ab.sqrt() * x0 + (1.0 - ab).sqrt() * eps


def q_step(x_prev: torch.Tensor, t: int, eps: torch.Tensor, sched: DiffusionSchedule) -> torch.Tensor:
    """One forward kernel step ``q(x_t | x_{t-1})``."""
    beta = float(sched.betas[sched.position(t)])
    return (1.0 - beta) ** 0.5 * x_prev + beta**0.5 * eps


def training_loss(
    model: NoisePredictor,
    x0: torch.Tensor,
    history_len: int,
    sched: DiffusionSchedule,
    rng: RngLike = None,
    future_only: bool = False,
    return_details: bool = False,
):
    """Noise-prediction MSE for a batch of clean padded images ``(B, T, T, 2)``.

    One timestep per image is drawn uniformly from ``1..T_diff``; noise covers
    the whole image and the loss averages over every pixel unless
    ``future_only`` restricts it to the columns being generated.
    """
    if x0.ndim == 3:
        x0 = x0.unsqueeze(0)
    if x0.ndim != 4 or x0.shape[-1] != 2 or x0.shape[1] != x0.shape[2]:
        raise ValueError(f"expected (B, T, T, 2) images, got {tuple(x0.shape)}")
    g = make_generator(rng)
    B = x0.shape[0]
    t = torch.randint(1, sched.T_diff + 1, (B,), generator=g)
    eps = torch.randn(x0.shape, generator=g, dtype=x0.dtype)
    x_t = q_sample(x0, t, eps, sched)
    inp = build_inpaint_input(x0, x_t, history_len).stacked
    pred = model(inp, t)
    if pred.shape != eps.shape:
        raise ValueError(f"model returned {tuple(pred.shape)}, expected {tuple(eps.shape)}")
    err = (pred - eps) ** 2
    if future_only:
        loss = err[:, :, history_len:, :].mean()
    else:
        loss = err.mean()
    if return_details:
        return loss, {"t": t, "eps": eps}
    return loss


def _gaussian(shape, rng, dtype) -> torch.Tensor:
    """Unit normal draws; a list of generators gives one independent lane each."""
    if isinstance(rng, (list, tuple)):
        if len(rng) != shape[0]:
            raise ValueError(f"got {len(rng)} generators for {shape[0]} lanes")
        return torch.stack([torch.randn(tuple(shape[1:]), generator=g, dtype=dtype) for g in rng])
    return torch.randn(tuple(shape), generator=make_generator(rng), dtype=dtype)


def p_sample_step(
    model: NoisePredictor,
    x_t: torch.Tensor,
    t: int,
    context: torch.Tensor,
    sched: DiffusionSchedule,
    rng=None,
) -> torch.Tensor:
    """One ancestral reverse step from timestep ``t`` to the previous scheduled one.

    ``context`` holds channels 2-4 of the inpainting input. The first element
    of the schedule is the final step and adds no noise. ``rng`` may be a
    list with one generator per batch lane.
    """
    k = _positions(sched, t)[0]
    B = x_t.shape[0]
    t_batch = torch.full((B,), int(t), dtype=torch.long)
    with torch.no_grad():
        eps_hat = model(torch.cat([x_t, context], dim=-1), t_batch)
    if not torch.isfinite(eps_hat).all():
        raise NumericalError(f"non-finite noise prediction at timestep {t}")
    alpha = float(sched.alphas[k])
    beta = float(sched.betas[k])
    ab = float(sched.alpha_bars[k])
    mean = (x_t - (beta / (1.0 - ab) ** 0.5) * eps_hat) / alpha**0.5
    if k == 0:
        return mean
    z = _gaussian(x_t.shape, rng, x_t.dtype)
    return mean + float(sched.posterior_vars[k]) ** 0.5 * z


def sample(
    model: NoisePredictor,
    history_image,
    history_len: int,
    steps: int,
    sched: DiffusionSchedule,
    rng: Union[RngLike, Sequence[int]] = None,
    n_samples: int | None = None,
) -> torch.Tensor:
    """Generate futures for one or more histories by inpainting.

    Parameters
    ----------
    history_image : array or tensor, (T, T, 2) or (B, T, T, 2)
        Normalized padded image; only columns ``< history_len`` are read.
    steps : int
        Number of reverse steps, strided over the full schedule.
    rng : int, Generator or sequence of ints
        A sequence gives every lane its own seed, so lane ``i`` depends
        only on ``rng[i]``.
    n_samples : int, optional
        Repeat a single history this many times.

    Returns
    -------
    Tensor of shape (B, T, T, 2) whose history columns equal the input.
    """
    if not 1 <= steps <= sched.T_diff:
        raise ValueError(f"steps must be within [1, {sched.T_diff}], got {steps}")
    hist = history_image if torch.is_tensor(history_image) else torch.as_tensor(np.asarray(history_image))
    if not hist.is_floating_point():
        hist = hist.double()
    if hist.ndim == 3:
        hist = hist.unsqueeze(0)
    if n_samples is not None:
        if hist.shape[0] != 1:
            raise ValueError("n_samples requires a single history image")
        hist = hist.expand(n_samples, *hist.shape[1:]).clone()
    B = hist.shape[0]
    sub = sched if steps == len(sched) else make_subschedule(sched, steps)

    if isinstance(rng, Sequence) and not isinstance(rng, (str, bytes)):
        if len(rng) != B:
            raise ValueError(f"got {len(rng)} seeds for {B} lanes")
        gen = [make_generator(int(s)) for s in rng]
    else:
        gen = make_generator(rng)

    context = build_inpaint_input(hist, hist, history_len).context
    x = _gaussian(hist.shape, gen, hist.dtype)
    for k in range(len(sub) - 1, -1, -1):
        x = p_sample_step(model, x, int(sub.timesteps[k]), context, sub, gen)
    out = x.clone()
    out[:, :, :history_len, :] = hist[:, :, :history_len, :]
    return out
