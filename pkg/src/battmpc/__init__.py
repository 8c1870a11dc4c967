"""Battery arbitrage backtesting with discounted-horizon dispatch.

Library layers, bottom up: domain (units, clocks, battery physics),
discount (horizon weighting schedules), mpc (dispatch programs), solver
(operator-splitting QP/LP solver), marketdata (ingestion and synthetic
scenarios), backtest (receding-horizon simulation and sweeps), config,
report, and cli.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .backtest import (
    BacktestConfig,
    Ledger,
    LedgerEntry,
    ProfitSummary,
    RawDataSource,
    SweepGrid,
    SweepResult,
    SweepRow,
    annual_profit,
    compare_report,
    horizon_length,
    run_backtest,
    run_sweep,
    settle,
)
from .config import ConfigError, load_run_config, parse_run_config
from .discount import DiscountSpec, GammaVector, build_gamma, weight
from .domain import (
    BatteryParams,
    MarketClock,
    SocState,
    is_half_hour_aligned,
    soc_step,
    validate_params,
)
from .marketdata import (
    ActualPriceSeries,
    AemoFormatError,
    AemoTableSpec,
    DataCoverageError,
    DataValidationError,
    ForecastIndex,
    ForecastSnapshot,
    LeadErrorStats,
    SynthConfig,
    forecast_error_stats,
    parse_aemo_csv,
    synth_generate,
)
from .mpc import (
    CanonicalProgram,
    MpcInstance,
    MpcPlan,
    build_discounted,
    build_standard,
    extract_plan,
)
from .solver import SolveResult, SolverSettings, kkt_residuals, solve

__all__ = [
    "__version__",
    "ActualPriceSeries",
    "AemoFormatError",
    "AemoTableSpec",
    "BacktestConfig",
    "BatteryParams",
    "CanonicalProgram",
    "ConfigError",
    "DataCoverageError",
    "DataValidationError",
    "DiscountSpec",
    "ForecastIndex",
    "ForecastSnapshot",
    "GammaVector",
    "LeadErrorStats",
    "Ledger",
    "LedgerEntry",
    "MarketClock",
    "MpcInstance",
    "MpcPlan",
    "ProfitSummary",
    "RawDataSource",
    "SocState",
    "SolveResult",
    "SolverSettings",
    "SweepGrid",
    "SweepResult",
    "SweepRow",
    "SynthConfig",
    "annual_profit",
    "build_discounted",
    "build_gamma",
    "build_standard",
    "compare_report",
    "extract_plan",
    "forecast_error_stats",
    "horizon_length",
    "is_half_hour_aligned",
    "kkt_residuals",
    "load_run_config",
    "parse_aemo_csv",
    "parse_run_config",
    "run_backtest",
    "run_sweep",
    "settle",
    "soc_step",
    "solve",
    "synth_generate",
    "validate_params",
    "weight",
]
