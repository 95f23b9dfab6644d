"""Run configuration: one YAML document, flag overrides, stable hashing."""
from __future__ import annotations

import copy
import hashlib
import json

import yaml

from .diffusion import DiffusionSchedule, linear_beta_schedule
from .ingest import WindowSpec
from .metrics import METRIC_NAMES, EvalConfig
from .training import TrainOptions
from .unet import UNetConfig, preset

DEFAULT_CONFIG: dict = {
    "data": {
        "ticker": "synthetic",
        "n_levels": 10,
        "history_len": 40,
        "pred_len": 24,
        "tick_size": 100,
        "eval_stride": None,  # None: non-overlapping windows
        "restrict_hours": True,
        "open": 34_200.0,
        "close": 57_600.0,
    },
    "codec": {
        "rolling_window": None,
        "clip_quantile": 0.025,
        "clip_prices": True,
        "clip_sizes": True,
    },
    "diffusion": {"T_diff": 1000, "beta_start": 1e-4, "beta_end": 0.02},
    "model": {"preset": "desk", "overrides": {}, "seed": 0},
    "train": {
        "lr": 1e-4,
        "batch_size": 16,
        "epochs": 1,
        "steps": None,
        "grad_clip": 1.0,
        "future_only": False,
        "checkpoint_every": None,
        "seed": 0,
    },
    "sample": {"steps": 1000, "count": 2, "seed": 0},
    "metrics": {
        "names": list(METRIC_NAMES),
        "bins": 50,
        "resamples": 1000,
        "level": 0.95,
        "seed": 0,
        "imbalance_depth": 1,
        "ofi_depth": 1,
        "return_lag": 1,
        "condition_buckets": None,
    },
}


def merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in (extra or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "overrides":
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def apply_overrides(cfg: dict, overrides=()) -> dict:
    """Return a copy of ``cfg`` with ``key.sub=value`` items applied (values parsed as YAML)."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} is not of the form key.sub=value")
        node = cfg
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = yaml.safe_load(raw)
    return cfg


def load_config(path=None, overrides=(), base: dict | None = None) -> dict:
    """Defaults (or ``base``), then the YAML file at ``path``, then overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG if base is None else base)
    if path is not None:
        with open(path) as fh:
            cfg = merge(cfg, yaml.safe_load(fh) or {})
    return apply_overrides(cfg, overrides)


def dump_config(cfg: dict, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def window_spec(cfg: dict) -> WindowSpec:
    d = cfg["data"]
    T = d["history_len"] + d["pred_len"]
    return WindowSpec(d["history_len"], d["pred_len"], d["n_levels"], d["eval_stride"] or T)


def unet_config(cfg: dict) -> UNetConfig:
    m = cfg["model"]
    ucfg = preset(m["preset"], **(m.get("overrides") or {}))
    T = window_spec(cfg).T
    if ucfg.resolution != T:
        raise ValueError(f"model resolution {ucfg.resolution} != window length {T}")
    return ucfg


def schedule(cfg: dict) -> DiffusionSchedule:
    d = cfg["diffusion"]
    return linear_beta_schedule(d["T_diff"], d["beta_start"], d["beta_end"])


def train_options(cfg: dict, checkpoint_path=None) -> TrainOptions:
    t = cfg["train"]
    return TrainOptions(
        lr=t["lr"], batch_size=t["batch_size"], epochs=t["epochs"], steps=t["steps"],
        grad_clip=t["grad_clip"], future_only=t["future_only"],
        checkpoint_every=t["checkpoint_every"], checkpoint_path=checkpoint_path,
    )


def eval_config(cfg: dict) -> EvalConfig:
    m = cfg["metrics"]
    return EvalConfig(
        metrics=tuple(m["names"]), bins=m["bins"], resamples=m["resamples"], level=m["level"],
        seed=m["seed"], imbalance_depth=m["imbalance_depth"], ofi_depth=m["ofi_depth"],
        return_lag=m["return_lag"], tick_size=cfg["data"]["tick_size"],
        condition_buckets=m["condition_buckets"],
    )


def codec_options(cfg: dict) -> dict:
    c = cfg["codec"]
    return {
        "rolling_window": c["rolling_window"],
        "clip_quantile": c["clip_quantile"],
        "clip_prices": c["clip_prices"],
        "clip_sizes": c["clip_sizes"],
        "tick_size": cfg["data"]["tick_size"],
    }
