"""Battery physical model, time conventions, and the shared SOC update rule.

State of charge is stored as a dimensionless fraction of nameplate capacity,
so the bounds from the battery datasheet (for example 0.1 and 1.0) apply
directly. Power is signed: positive discharges into the market, negative
charges from it.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, time, timedelta

TRADING_DAY_ANCHOR = time(4, 0)
HALF_HOUR = timedelta(minutes=30)


@dataclass(frozen=True)
class BatteryParams:
    """Physical and operational limits of the storage asset.

    Attributes:
        e_nom: energy capacity in MWh.
        p_lower: minimum power in MW, negative means charging.
        p_upper: maximum power in MW, positive means discharging.
        soc_lower: lower state-of-charge bound, fraction of e_nom.
        soc_upper: upper state-of-charge bound, fraction of e_nom.
        eta: round-trip efficiency coefficient, applied symmetrically.
        dt: interval length in hours.
    """

    e_nom: float = 2.2
    p_lower: float = -1.1
    p_upper: float = 1.1
    soc_lower: float = 0.1
    soc_upper: float = 1.0
    eta: float = 0.95
    dt: float = 0.5

    @property
    def kappa(self) -> float:
        """SOC change per MW of discharge over one interval."""
        return self.eta * self.dt / self.e_nom

    @property
    def throughput_per_day(self) -> float:
        """Daily cycling allowance in MWh of absolute dispatched energy."""
        return self.e_nom


@dataclass(frozen=True)
class SocState:
    """State of charge at the start of a half-hour interval."""

    soc: float
    timestamp: datetime

    def in_bounds(self, params: BatteryParams) -> bool:
        return params.soc_lower <= self.soc <= params.soc_upper


@dataclass(frozen=True)
class MarketClock:
    """Half-hour market time with a 04:00 trading-day anchor."""

    timestamp: datetime

    def __post_init__(self) -> None:
        if not is_half_hour_aligned(self.timestamp):
            raise ValueError(
                f"timestamp {self.timestamp.isoformat()} is not on a 30-minute boundary"
            )

    def trading_day_start(self) -> datetime:
        """Latest 04:00 at or before this timestamp."""
        anchor = self.timestamp.replace(
            hour=TRADING_DAY_ANCHOR.hour, minute=0, second=0, microsecond=0
        )
        if self.timestamp < anchor:
            anchor -= timedelta(days=1)
        return anchor

    def offset_hours(self) -> float:
        """Hours elapsed since the trading-day anchor."""
        return (self.timestamp - self.trading_day_start()).total_seconds() / 3600.0


def is_half_hour_aligned(ts: datetime) -> bool:
    return ts.minute in (0, 30) and ts.second == 0 and ts.microsecond == 0


def soc_step(soc_prev: float, p: float, params: BatteryParams) -> float:
    """One-interval SOC update for dispatching power p.

    Returns soc_prev - (eta * dt / e_nom) * p. The result is intentionally
    not clamped; bound enforcement belongs to the optimizer and simulator.
    """
    return soc_prev - params.kappa * p


def validate_params(params: BatteryParams) -> list[str]:
    """Check every battery invariant; returns the violated field names."""
    violations: list[str] = []
    if not params.e_nom > 0:
        violations.append("e_nom: must be positive")
    if not params.dt > 0:
        violations.append("dt: must be positive")
    if not 0 < params.eta <= 1:
        violations.append("eta: must be in (0, 1]")
    if not params.p_lower < 0:
        violations.append("p_lower: must be negative")
    if not params.p_upper > 0:
        violations.append("p_upper: must be positive")
    if not 0 <= params.soc_lower:
        violations.append("soc bounds: soc_lower must be >= 0")
    if not params.soc_lower < params.soc_upper:
        violations.append("soc bounds: soc_lower must be < soc_upper")
    if not params.soc_upper <= 1:
        violations.append("soc bounds: soc_upper must be <= 1")
    return violations


def require_valid_params(params: BatteryParams) -> None:
    violations = validate_params(params)
    if violations:
        raise ValueError("invalid battery parameters: " + "; ".join(violations))
