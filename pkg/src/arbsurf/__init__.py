"""Arbitrage-free option price surfaces from bid/ask quotes by linear programming."""

from .calibration import CalibConfig, calibrate, calibrate_smp, fitted_prices
from .dlv import DlvSurface, dlv_from_prices, dlv_to_surface
from .errors import (ArbitrageError, ArbSurfError, CalibrationError, DomainError, ExtrapolationError,
                     InputError, SchemaError, TensorSizeError)
from .generalized import GeneralizedSurface, calibrate_generalized
from .linear_surface import LinearSurface
from .market_data import ExpirySlice, MarketSnapshot, PureQuote, RawQuote, build_snapshot
from .noarb import ArbReport, check_surface, density_from_calls
from .smooth_surface import SmoothSurface

__version__ = "0.1.0"

__all__ = [
    "ArbReport", "ArbSurfError", "ArbitrageError", "CalibConfig", "CalibrationError", "DlvSurface",
    "DomainError", "ExpirySlice", "ExtrapolationError", "GeneralizedSurface", "InputError", "LinearSurface",
    "MarketSnapshot", "PureQuote", "RawQuote", "SchemaError", "SmoothSurface", "TensorSizeError",
    "build_snapshot", "calibrate", "calibrate_generalized", "calibrate_smp", "check_surface",
    "density_from_calls", "dlv_from_prices", "dlv_to_surface", "fitted_prices",
]
