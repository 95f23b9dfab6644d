"""Noise-prediction UNet for square order book images.

The network reads a channels-last ``(B, T, T, 5)`` inpainting input plus one
diffusion timestep per batch element and predicts the ``(B, T, T, 2)`` noise.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn
from torch.nn import functional as F


@dataclass(frozen=True)
class UNetConfig:
    """Architecture hyper-parameters.

    ``attention_at`` holds 0-based block indices; self-attention is placed in
    that down block and in its mirrored up block.
    """

    resolution: int = 64
    block_channels: tuple[int, ...] = (16, 16, 32, 32)
    attention_at: tuple[int, ...] = (2,)
    in_channels: int = 5
    out_channels: int = 2
    norm_groups: int = 8
    time_embed_dim: int = 64

    def __post_init__(self):
        object.__setattr__(self, "block_channels", tuple(int(c) for c in self.block_channels))
        object.__setattr__(self, "attention_at", tuple(int(i) for i in self.attention_at))
        levels = len(self.block_channels)
        if levels < 1:
            raise ValueError("need at least one block")
        if self.resolution % (2 ** (levels - 1)):
            raise ValueError(
                f"resolution {self.resolution} is not divisible by 2**{levels - 1} for {levels} blocks"
            )
        bad = [i for i in self.attention_at if not 0 <= i < levels]
        if bad:
            raise ValueError(f"attention block indices {bad} out of range for {levels} blocks")
        if any(c % self.norm_groups for c in self.block_channels):
            raise ValueError(f"every block width must be divisible by norm_groups={self.norm_groups}")
        if self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even")

    @property
    def levels(self) -> int:
        return len(self.block_channels)

    @property
    def deepest_resolution(self) -> int:
        return self.resolution // 2 ** (self.levels - 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block_channels"] = list(self.block_channels)
        d["attention_at"] = list(self.attention_at)
        return d


PRESETS = {
    "full": UNetConfig(
        resolution=256,
        block_channels=(128, 128, 256, 256, 512, 512),
        attention_at=(4,),
        norm_groups=32,
        time_embed_dim=512,
    ),
    "desk": UNetConfig(),
}


def preset(name: str, **overrides) -> UNetConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return UNetConfig(**{**base.to_dict(), **overrides})


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64, device=t.device) / half)
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class ConvBlock(nn.Module):
    """conv-norm-ReLU twice, timestep added after the first conv, residual skip."""

    def __init__(self, in_ch: int, out_ch: int, temb_dim: int, groups: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm1 = nn.GroupNorm(groups, out_ch)
        self.temb = nn.Linear(temb_dim, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(groups, out_ch)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, temb):
        h = F.relu(self.norm1(self.conv1(x)))
        h = h + self.temb(temb)[:, :, None, None]
        h = F.relu(self.norm2(self.conv2(h)))
        return h + self.skip(x)


class SelfAttention(nn.Module):
    """Single-head attention over all spatial positions of a feature map."""

    def __init__(self, ch: int, groups: int):
        super().__init__()
        self.norm = nn.GroupNorm(groups, ch)
        self.qkv = nn.Conv2d(ch, 3 * ch, 1)
        self.proj = nn.Conv2d(ch, ch, 1)

    def forward(self, x):
        B, C, H, W = x.shape
        q, k, v = self.qkv(self.norm(x)).reshape(B, 3, C, H * W).unbind(1)
        w = torch.softmax(torch.einsum("bci,bcj->bij", q, k) / math.sqrt(C), dim=-1)
        h = torch.einsum("bij,bcj->bci", w, v).reshape(B, C, H, W)
        return x + self.proj(h)


class UNet(nn.Module):
    def __init__(self, cfg: UNetConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.block_channels
        g = cfg.norm_groups
        d = cfg.time_embed_dim
        self.time_mlp = nn.Sequential(nn.Linear(d, d), nn.ReLU(), nn.Linear(d, d))
        self.stem = nn.Conv2d(cfg.in_channels, ch[0], 3, padding=1)

        self.down = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        prev = ch[0]
        for i, c in enumerate(ch):
            self.down.append(ConvBlock(prev, c, d, g))
            self.down_attn.append(SelfAttention(c, g) if i in cfg.attention_at else nn.Identity())
            prev = c
        self.mid = ConvBlock(prev, prev, d, g)

        self.up = nn.ModuleList()
        self.up_attn = nn.ModuleList()
        for i in reversed(range(cfg.levels)):
            self.up.append(ConvBlock(prev + ch[i], ch[i], d, g))
            self.up_attn.append(SelfAttention(ch[i], g) if i in cfg.attention_at else nn.Identity())
            prev = ch[i]
        self.head_norm = nn.GroupNorm(g, ch[0])
        self.head = nn.Conv2d(ch[0], cfg.out_channels, 3, padding=1)

    def forward(self, x: torch.Tensor, t) -> torch.Tensor:
        cfg = self.cfg
        T = cfg.resolution
        if x.ndim != 4 or tuple(x.shape[1:]) != (T, T, cfg.in_channels):
            raise ValueError(f"expected input (B, {T}, {T}, {cfg.in_channels}), got {tuple(x.shape)}")
        B = x.shape[0]
        t = torch.as_tensor(t, device=x.device)
        if t.ndim == 0:
            t = t.expand(B)
        if t.shape != (B,):
            raise ValueError(f"need one timestep per batch element, got shape {tuple(t.shape)}")
        dtype = self.stem.weight.dtype
        temb = self.time_mlp(timestep_embedding(t, cfg.time_embed_dim).to(dtype))

        h = self.stem(x.permute(0, 3, 1, 2).to(dtype))
        skips = []
        for i, (block, attn) in enumerate(zip(self.down, self.down_attn)):
            h = attn(block(h, temb))
            skips.append(h)
            if i < cfg.levels - 1:
                h = F.avg_pool2d(h, 2)
        h = self.mid(h, temb)
        for j, (block, attn) in enumerate(zip(self.up, self.up_attn)):
            i = cfg.levels - 1 - j
            if i < cfg.levels - 1:
                h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = attn(block(torch.cat([h, skips[i]], dim=1), temb))
        out = self.head(F.relu(self.head_norm(h)))
        return out.permute(0, 2, 3, 1)

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def build_unet(cfg: UNetConfig | str = "desk", rng: int = 0, device=None) -> UNet:
    """Instantiate a UNet with weights drawn from ``rng`` (an integer seed)."""
    if isinstance(cfg, str):
        cfg = preset(cfg)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(rng))
        if device is not None:
            with torch.device(device):
                return UNet(cfg)
        return UNet(cfg)


def forward(model: UNet, inputs, t) -> torch.Tensor:
    """Evaluate ``model`` on a channels-last batch without tracking gradients."""
    x = torch.as_tensor(inputs)
    with torch.no_grad():
        return model(x, t)
