"""Limit order book forecasting with an inpainting diffusion model."""
from .baseline import ContParams, calibrate, simulate
from .book import BookSeries, BookState, BookValidationError, LevelQuote
from .codec import (
    LobImage, NormParams, RepairReport, build_inpaint_input, decode_image, denormalize,
    encode_window, normalize, pad_to_square, unpad,
)
from .diffusion import DiffusionSchedule, NumericalError, linear_beta_schedule, make_subschedule, sample
from .estimators import ContBaseline, LobDiffusionForecaster, LobImageEncoder
from .ingest import OrderbookFormatError, WindowSpec, iterate_windows, parse_orderbook_file
from .metrics import EvalConfig, MetricReport, evaluate
from .synthetic import gen_stream
from .unet import UNet, UNetConfig, build_unet, preset

__version__ = "0.1.0"

__all__ = [
    "BookSeries", "BookState", "BookValidationError", "ContBaseline", "ContParams", "DiffusionSchedule",
    "EvalConfig", "LevelQuote", "LobDiffusionForecaster", "LobImage", "LobImageEncoder", "MetricReport",
    "NormParams", "NumericalError", "OrderbookFormatError", "RepairReport", "UNet", "UNetConfig",
    "WindowSpec", "build_inpaint_input", "build_unet", "calibrate", "decode_image", "denormalize",
    "encode_window", "evaluate", "gen_stream", "iterate_windows", "linear_beta_schedule",
    "make_subschedule", "normalize", "pad_to_square", "parse_orderbook_file", "preset", "sample",
    "simulate", "unpad",
]
