"""Single-pass training loop and checkpoint files."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch

from .diffusion import DiffusionSchedule, NumericalError, make_generator, training_loss
from .unet import UNet, UNetConfig, build_unet

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "lobdiffusion-checkpoint/1"


@dataclass
class TrainOptions:
    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 1
    steps: Optional[int] = None  # overrides epochs; cycles through the data
    grad_clip: Optional[float] = 1.0
    future_only: bool = False
    shuffle: bool = True
    checkpoint_every: Optional[int] = None
    checkpoint_path: Optional[str] = None
    log_every: int = 50


@dataclass
class TrainResult:
    model: UNet
    loss_trace: list[float]
    step: int
    optimizer: torch.optim.Optimizer = field(repr=False)
    generator: torch.Generator = field(repr=False)


def _batches(n: int, opts: TrainOptions, g: torch.Generator):
    """Yield index batches: ``epochs`` full passes, or ``steps`` batches when set."""

    def order():
        return torch.randperm(n, generator=g) if opts.shuffle else torch.arange(n)

    if opts.steps is None:
        for _ in range(opts.epochs):
            idx = order()
            for s in range(0, n, opts.batch_size):
                yield idx[s : s + opts.batch_size]
        return
    buf = torch.empty(0, dtype=torch.long)
    for _ in range(opts.steps):
        while len(buf) < opts.batch_size:
            buf = torch.cat([buf, order()])
        yield buf[: opts.batch_size]
        buf = buf[opts.batch_size :]


def train(
    model: UNet,
    dataset,
    opts: TrainOptions,
    sched: DiffusionSchedule,
    history_len: int,
    rng=0,
    resume: Optional[dict] = None,
    run_config: Optional[dict] = None,
) -> TrainResult:
    """Fit ``model`` to predict diffusion noise on padded normalized images.

    ``dataset`` is an array or tensor of shape ``(N, T, T, 2)``. By default it
    is traversed exactly once. ``resume`` is a checkpoint dict from
    :func:`load_checkpoint`; its optimizer state, generator state, step
    counter and loss trace are continued.
    """
    data = torch.as_tensor(np.asarray(dataset) if not torch.is_tensor(dataset) else dataset)
    if data.ndim != 4 or len(data) == 0:
        raise ValueError(f"dataset must be a non-empty (N, T, T, 2) array, got {tuple(data.shape)}")
    param_dtype = next(model.parameters()).dtype
    data = data.to(param_dtype)
    opt = torch.optim.Adam(model.parameters(), lr=opts.lr)
    g = make_generator(rng)
    step = 0
    trace: list[float] = []
    if resume is not None:
        opt.load_state_dict(resume["optimizer"])
        for group in opt.param_groups:
            group["lr"] = opts.lr
        g.set_state(resume["rng_state"])
        step = int(resume["step"])
        trace = list(resume["loss_trace"])

    model.train()
    for idx in _batches(len(data), opts, g):
        loss, details = training_loss(
            model, data[idx], history_len, sched, g, future_only=opts.future_only, return_details=True
        )
        opt.zero_grad(set_to_none=True)
        loss.backward()
        grad_norm = torch.sqrt(
            sum((p.grad.detach() ** 2).sum() for p in model.parameters() if p.grad is not None)
        ).item()
        if not math.isfinite(loss.item()) or not math.isfinite(grad_norm):
            raise NumericalError(
                f"non-finite loss at step {step}: loss={loss.item()}, "
                f"t={details['t'].tolist()}, grad_norm={grad_norm}"
            )
        if opts.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(model.parameters(), opts.grad_clip)
        opt.step()
        step += 1
        trace.append(loss.item())
        if opts.log_every and step % opts.log_every == 0:
            logger.info("step %d loss %.5f", step, float(np.mean(trace[-opts.log_every:])))
        if opts.checkpoint_every and opts.checkpoint_path and step % opts.checkpoint_every == 0:
            save_checkpoint(opts.checkpoint_path, model, opt, g, step, trace, run_config)
    model.eval()
    if opts.checkpoint_path:
        save_checkpoint(opts.checkpoint_path, model, opt, g, step, trace, run_config)
    return TrainResult(model, trace, step, opt, g)


def smoothed(trace, window: int = 50) -> np.ndarray:
    """Trailing moving average of a loss trace."""
    trace = np.asarray(trace, dtype=np.float64)
    if len(trace) < window:
        window = max(1, len(trace))
    kernel = np.ones(window) / window
    return np.convolve(trace, kernel, mode="valid")


def save_checkpoint(path, model: UNet, optimizer, generator, step: int, loss_trace, run_config=None) -> None:
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "unet_config": model.cfg.to_dict(),
            "config": run_config or {},
            "weights": {k: v.detach().clone() for k, v in model.state_dict().items()},
            "optimizer": optimizer.state_dict() if optimizer is not None else None,
            "rng_state": generator.get_state() if generator is not None else None,
            "step": int(step),
            "loss_trace": list(map(float, loss_trace)),
        },
        path,
    )


def load_checkpoint(path) -> dict:
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if ckpt.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    return ckpt


def model_from_checkpoint(ckpt: dict) -> UNet:
    cfg = UNetConfig(**ckpt["unet_config"])
    model = build_unet(cfg, 0)
    dtype = next(iter(ckpt["weights"].values())).dtype
    model.to(dtype)
    model.load_state_dict(ckpt["weights"])
    model.eval()
    return model


def options_dict(opts: TrainOptions) -> dict:
    return asdict(opts)
