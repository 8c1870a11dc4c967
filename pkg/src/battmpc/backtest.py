"""Receding-horizon simulation, settlement accounting, and parameter sweeps.

Each half-hour in the window: take the forecast snapshot issued at that
instant, truncate it to the trading-day horizon, solve the dispatch
program starting from the chained SOC, execute the first scheduled power,
and settle it against the six actual 5-minute prices of the interval.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta

import numpy as np

from .discount import DiscountSpec, build_gamma
from .domain import (
    HALF_HOUR,
    BatteryParams,
    MarketClock,
    is_half_hour_aligned,
    soc_step,
    validate_params,
)
from .marketdata import (
    DEFAULT_ACTUAL_SPEC,
    DEFAULT_FORECAST_SPEC,
    ActualPriceSeries,
    AemoTableSpec,
    DataCoverageError,
    ForecastIndex,
    ForecastSnapshot,
    SynthConfig,
    load_actuals,
    read_actuals_csv,
    read_forecasts_csv,
    synth_generate,
    validate_synth_config,
)
from .mpc import MpcInstance, build_discounted, extract_plan
from .solver import SolverSettings, solve

log = logging.getLogger(__name__)

POLICY_FAIL = "fail"
POLICY_FORWARD_FILL = "forward_fill"
POLICY_SKIP = "skip_zero_dispatch"
POLICIES = (POLICY_FAIL, POLICY_FORWARD_FILL, POLICY_SKIP)

ENTRY_SKIPPED = "skipped"

_EXTENSION_OFFSET = timedelta(hours=8, minutes=30)


@dataclass(frozen=True)
class RawDataSource:
    """Paths to raw or normalized market-data files.

    Files under raw_dir and the actuals file may be either AEMO C/I/D
    reports or this package's normalized CSVs; the format is detected per
    file, so parse-once-normalize-once workflows need no config change.
    """

    raw_dir: str
    actuals_file: str
    forecast_spec: AemoTableSpec = DEFAULT_FORECAST_SPEC
    actual_spec: AemoTableSpec = DEFAULT_ACTUAL_SPEC
    region: str | None = None


@dataclass(frozen=True)
class BacktestConfig:
    battery: BatteryParams = BatteryParams()
    discount: DiscountSpec = DiscountSpec()
    data: SynthConfig | RawDataSource = field(default_factory=SynthConfig)
    initial_soc: float | None = None
    start: datetime | None = None
    end: datetime | None = None
    solver: SolverSettings = SolverSettings()
    policy: str = POLICY_FAIL


@dataclass(frozen=True)
class LedgerEntry:
    """Outcome of one executed half-hour interval."""

    interval_start: datetime
    t_k: int
    power_mw: float
    soc: float
    mean_price: float
    revenue: float
    objective: float
    status: str


@dataclass(frozen=True)
class Ledger:
    """Per-interval records plus run-level solver diagnostics."""

    entries: tuple[LedgerEntry, ...]
    solve_count: int
    infeasible_count: int
    max_iteration_count: int
    skipped_count: int
    max_primal_residual: float
    max_dual_residual: float
    max_daily_throughput_mwh: float


@dataclass(frozen=True)
class ProfitSummary:
    total: float
    count: int


@dataclass(frozen=True)
class SweepRow:
    scheme: str
    gamma0: float
    lam: float
    s: int
    annual_profit: float
    uplift_pct: float


@dataclass(frozen=True)
class SweepGrid:
    """Hyperparameter grid; defaults mirror the study's full grid."""

    schemes: tuple[str, ...] = ("simulated_anneal", "cosine_anneal", "power_law")
    gamma0s: tuple[float, ...] = (0.99, 0.95)
    lams: tuple[float, ...] = (0.0, 0.5, 1.0)
    ss: tuple[int, ...] = (1, 2)

    def points(self) -> list[DiscountSpec]:
        """Grid points in report row order: (scheme, s, gamma0, lambda)."""
        out = []
        for scheme in self.schemes:
            for s in self.ss:
                for gamma0 in self.gamma0s:
                    for lam in self.lams:
                        out.append(DiscountSpec(scheme=scheme, gamma0=gamma0, lam=lam, s=s))
        return out


@dataclass(frozen=True)
class SweepResult:
    baseline: SweepRow
    rows: tuple[SweepRow, ...]

    def all_rows(self) -> list[SweepRow]:
        return [self.baseline, *self.rows]


def horizon_length(t: datetime) -> int:
    """Planning horizon in half-hours at interval start t.

    The trading day anchors at 04:00. Forecasts issued in the first 8.5
    hours of a trading day run to the end of that day; from 12:30 onward
    they extend through the end of the next trading day. The count from t
    to the horizon end is clamped to [32, 80].
    """
    clock = MarketClock(t)
    anchor = clock.trading_day_start()
    if t - anchor < _EXTENSION_OFFSET:
        end = anchor + timedelta(hours=24)
    else:
        end = anchor + timedelta(hours=48)
    count = int((end - t) / HALF_HOUR)
    return min(80, max(32, count))


def settle(p: float, five_min_prices, dt: float = 0.5) -> float:
    """Revenue in dollars for dispatching p MW over one interval."""
    prices = list(five_min_prices)
    if len(prices) != 6:
        raise ValueError(f"settlement needs exactly 6 prices, got {len(prices)}")
    return p * dt * float(np.mean(prices))


def annual_profit(ledger: Ledger) -> ProfitSummary:
    """Total revenue over the ledger and the number of settled intervals."""
    if not ledger.entries:
        raise ValueError("ledger is empty")
    total = float(sum(entry.revenue for entry in ledger.entries))
    return ProfitSummary(total=total, count=len(ledger.entries))


def validate_config(config: BacktestConfig) -> list[str]:
    violations = [f"battery.{v}" for v in validate_params(config.battery)]
    if config.policy not in POLICIES:
        violations.append(f"policy: unknown policy {config.policy!r}")
    if isinstance(config.data, SynthConfig):
        violations.extend(f"data.synthetic.{v}" for v in validate_synth_config(config.data))
    start, end = _window(config)
    if start is None or end is None:
        violations.append("window: start and end are required for raw data sources")
    else:
        if not (is_half_hour_aligned(start) and is_half_hour_aligned(end)):
            violations.append("window: start and end must be half-hour aligned")
        if not start < end:
            violations.append("window: start must precede end")
    soc0 = _initial_soc(config)
    if not config.battery.soc_lower <= soc0 <= config.battery.soc_upper:
        violations.append("initial_soc: outside SOC bounds")
    return violations


def _window(config: BacktestConfig) -> tuple[datetime | None, datetime | None]:
    start, end = config.start, config.end
    if isinstance(config.data, SynthConfig):
        from .marketdata import SYNTH_START

        if start is None:
            start = SYNTH_START
        if end is None:
            end = SYNTH_START + config.data.days * 48 * HALF_HOUR
    return start, end


def _initial_soc(config: BacktestConfig) -> float:
    if config.initial_soc is not None:
        return config.initial_soc
    return config.battery.soc_lower


def load_data(config: BacktestConfig) -> tuple[ForecastIndex, ActualPriceSeries]:
    """Materialize the configured data source."""
    if isinstance(config.data, SynthConfig):
        actuals, forecasts = synth_generate(config.data)
        return forecasts, actuals
    source = config.data
    forecasts = _load_forecast_dir(source)
    actuals = _load_actuals_file(source)
    return forecasts, actuals


def _is_normalized_csv(path, header: list[str]) -> bool:
    try:
        with open(path, encoding="utf-8", newline="") as handle:
            first = handle.readline().strip()
    except UnicodeDecodeError:
        return False
    return first == ",".join(header)


def _load_forecast_dir(source: RawDataSource) -> ForecastIndex:
    from pathlib import Path

    from .marketdata import FORECAST_CSV_HEADER, build_forecast_index, parse_aemo_csv

    root = Path(source.raw_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"not a directory: {root}")
    rows = []
    normalized_indexes = []
    for path in sorted(root.iterdir()):
        if not path.is_file() or path.suffix.lower() not in (".csv", ".zip"):
            continue
        if path.suffix.lower() == ".csv" and _is_normalized_csv(path, FORECAST_CSV_HEADER):
            normalized_indexes.append(read_forecasts_csv(path))
        else:
            rows.extend(parse_aemo_csv(path, source.forecast_spec))
    snapshots = []
    for index in normalized_indexes:
        snapshots.extend(index.snapshots())
    if rows:
        raw_index = build_forecast_index(rows, region=source.region)
        snapshots.extend(raw_index.snapshots())
    return ForecastIndex(snapshots)


def _load_actuals_file(source: RawDataSource) -> ActualPriceSeries:
    from .marketdata import ACTUALS_CSV_HEADER

    if _is_normalized_csv(source.actuals_file, ACTUALS_CSV_HEADER):
        return read_actuals_csv(source.actuals_file)
    return load_actuals(source.actuals_file, source.actual_spec, region=source.region)


def _snapshot_prices_from(snapshot: ForecastSnapshot, start: datetime):
    """Price vector of consecutive targets starting exactly at start."""
    targets = snapshot.targets()
    try:
        offset = targets.index(start)
    except ValueError:
        return None
    return snapshot.prices()[offset:]


def run_backtest(
    config: BacktestConfig,
    forecasts: ForecastIndex | None = None,
    actuals: ActualPriceSeries | None = None,
) -> Ledger:
    """Simulate the receding-horizon strategy over the configured window.

    Preloaded data may be passed to avoid re-reading files; it must match
    the config's region and window. Failed solves (infeasible or at the
    iteration cap) execute zero power and are flagged in their entries.
    """
    violations = validate_config(config)
    if violations:
        raise ValueError("invalid backtest config: " + "; ".join(violations))
    if forecasts is None or actuals is None:
        forecasts, actuals = load_data(config)
    start, end = _window(config)
    params = config.battery
    spec = config.discount
    half_hour_prices = actuals.half_hour_prices()

    entries: list[LedgerEntry] = []
    soc = _initial_soc(config)
    solve_count = 0
    infeasible = 0
    max_iter = 0
    skipped = 0
    max_rp = 0.0
    max_rd = 0.0
    day_throughput: dict[datetime, float] = {}

    k = start
    while k < end:
        six = half_hour_prices.get(k)
        if six is None or len(six) != 6:
            raise DataCoverageError(
                f"no settlement prices for interval {k.isoformat()}"
            )
        mean_price = float(np.mean(six))

        prices = None
        snapshot = forecasts.get(k)
        if snapshot is not None:
            prices = _snapshot_prices_from(snapshot, k)
        if prices is None and config.policy == POLICY_FORWARD_FILL:
            previous = forecasts.latest_at_or_before(k)
            if previous is not None:
                prices = _snapshot_prices_from(previous, k)
                if prices is not None:
                    log.warning(
                        "forward-filling %s from snapshot %s",
                        k.isoformat(),
                        previous.run_time.isoformat(),
                    )
        if prices is None or len(prices) == 0:
            if config.policy == POLICY_SKIP:
                log.warning("no usable snapshot at %s; executing zero dispatch", k.isoformat())
                revenue = settle(0.0, six, params.dt)
                entries.append(
                    LedgerEntry(
                        interval_start=k,
                        t_k=0,
                        power_mw=0.0,
                        soc=soc,
                        mean_price=mean_price,
                        revenue=revenue,
                        objective=0.0,
                        status=ENTRY_SKIPPED,
                    )
                )
                skipped += 1
                k += HALF_HOUR
                continue
            raise DataCoverageError(
                f"no forecast snapshot covering run_time {k.isoformat()}"
            )

        t_k = min(len(prices), horizon_length(k))
        prices = np.asarray(prices[:t_k], dtype=np.float64)
        gamma = build_gamma(spec, t_k)
        instance = MpcInstance(
            prices=prices, gamma=gamma, spec=spec, params=params, soc0=soc, horizon=t_k
        )
        program = build_discounted(instance)
        result = solve(program, config.solver)
        plan = extract_plan(instance, result)
        solve_count += 1
        max_rp = max(max_rp, result.residuals.primal)
        max_rd = max(max_rd, result.residuals.dual)

        if plan.status == "solved":
            p = float(plan.powers[0])
            objective = plan.objective
        else:
            if plan.status == "infeasible":
                infeasible += 1
                objective = 0.0
                log.error(
                    "solver reported infeasible at %s; executing zero dispatch "
                    "(instances are feasible at P=0, so this indicates a bug)",
                    k.isoformat(),
                )
            else:
                max_iter += 1
                objective = plan.objective
                log.warning(
                    "solver hit the iteration cap at %s; executing zero dispatch",
                    k.isoformat(),
                )
            p = 0.0

        # clamp the executed move so the realized SOC stays in its box,
        # then re-apply the update rule so ledger chaining is bit-exact
        soc_next = soc_step(soc, p, params)
        if soc_next > params.soc_upper:
            p = (soc - params.soc_upper) / params.kappa
        elif soc_next < params.soc_lower:
            p = (soc - params.soc_lower) / params.kappa
        p = min(max(p, params.p_lower), params.p_upper)
        soc_next = soc_step(soc, p, params)

        revenue = settle(p, six, params.dt)
        entries.append(
            LedgerEntry(
                interval_start=k,
                t_k=t_k,
                power_mw=p,
                soc=soc_next,
                mean_price=mean_price,
                revenue=revenue,
                objective=objective,
                status=plan.status,
            )
        )
        day = MarketClock(k).trading_day_start()
        day_throughput[day] = day_throughput.get(day, 0.0) + abs(p) * params.dt
        soc = soc_next
        k += HALF_HOUR

    return Ledger(
        entries=tuple(entries),
        solve_count=solve_count,
        infeasible_count=infeasible,
        max_iteration_count=max_iter,
        skipped_count=skipped,
        max_primal_residual=max_rp,
        max_dual_residual=max_rd,
        max_daily_throughput_mwh=max(day_throughput.values(), default=0.0),
    )


def _baseline_spec() -> DiscountSpec:
    return DiscountSpec(scheme="none", gamma0=1.0, lam=0.0, s=1)


def _uplift_pct(profit: float, baseline: float) -> float:
    if baseline == 0.0:
        return float("nan") if profit != 0.0 else 0.0
    return 100.0 * (profit - baseline) / abs(baseline)


def _sweep_point(args):
    config, spec, forecasts, actuals = args
    point_config = replace(config, discount=spec)
    try:
        ledger = run_backtest(point_config, forecasts=forecasts, actuals=actuals)
    except Exception as exc:
        raise RuntimeError(
            f"sweep point scheme={spec.scheme} gamma0={spec.gamma0} "
            f"lambda={spec.lam} s={spec.s} failed: {exc}"
        ) from exc
    return annual_profit(ledger).total


def run_sweep(
    config: BacktestConfig, grid: SweepGrid | None = None, jobs: int = 1
) -> SweepResult:
    """One backtest per grid point plus the scheme-none baseline.

    Rows come back ordered (scheme, s, gamma0, lambda) following the grid's
    listed orders; results are identical whether points run serially or
    across processes.
    """
    grid = grid if grid is not None else SweepGrid()
    points = grid.points()
    if not points:
        raise ValueError("sweep grid is empty")
    forecasts, actuals = load_data(config)
    baseline_profit = _sweep_point((config, _baseline_spec(), forecasts, actuals))
    tasks = [(config, spec, forecasts, actuals) for spec in points]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            profits = list(pool.map(_sweep_point, tasks))
    else:
        profits = [_sweep_point(task) for task in tasks]
    rows = tuple(
        SweepRow(
            scheme=spec.scheme,
            gamma0=spec.gamma0,
            lam=spec.lam,
            s=spec.s,
            annual_profit=profit,
            uplift_pct=_uplift_pct(profit, baseline_profit),
        )
        for spec, profit in zip(points, profits)
    )
    baseline = SweepRow(
        scheme="none",
        gamma0=1.0,
        lam=0.0,
        s=1,
        annual_profit=baseline_profit,
        uplift_pct=0.0,
    )
    return SweepResult(baseline=baseline, rows=rows)


def ledger_csv_lines(ledger: Ledger) -> list[str]:
    """Ledger CSV rows with 6-decimal fixed formatting."""
    lines = ["interval_start,t_k,power_mw,soc,mean_price,revenue,objective,status"]
    for e in ledger.entries:
        lines.append(
            f"{e.interval_start.isoformat()},{e.t_k},{e.power_mw:.6f},{e.soc:.6f},"
            f"{e.mean_price:.6f},{e.revenue:.6f},{e.objective:.6f},{e.status}"
        )
    return lines


def write_ledger_csv(ledger: Ledger, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write("\n".join(ledger_csv_lines(ledger)) + "\n")


def sweep_csv_lines(sweep: SweepResult) -> list[str]:
    """Sweep CSV rows, baseline first, 6-decimal fixed formatting."""
    lines = ["scheme,gamma0,lambda,s,annual_profit,uplift_pct"]
    for row in sweep.all_rows():
        lines.append(
            f"{row.scheme},{row.gamma0:.6f},{row.lam:.6f},{row.s},"
            f"{row.annual_profit:.6f},{row.uplift_pct:.6f}"
        )
    return lines


def write_sweep_csv(sweep: SweepResult, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write("\n".join(sweep_csv_lines(sweep)) + "\n")


def compare_report(sweep: SweepResult) -> str:
    """Text table pivoting profits by (scheme, s) rows and (gamma0, lambda)
    columns, per-column maxima marked with *, plus a best-point summary."""
    rows = list(sweep.rows)
    out = []
    out.append(
        f"baseline (scheme none): annual_profit {sweep.baseline.annual_profit:.2f}"
    )
    if not rows:
        out.append("no discounted rows")
        return "\n".join(out)

    col_keys: list[tuple[float, float]] = []
    row_keys: list[tuple[str, int]] = []
    for row in rows:
        if (row.gamma0, row.lam) not in col_keys:
            col_keys.append((row.gamma0, row.lam))
        if (row.scheme, row.s) not in row_keys:
            row_keys.append((row.scheme, row.s))
    cells = {(row.scheme, row.s, row.gamma0, row.lam): row.annual_profit for row in rows}
    col_max = {
        key: max(
            cells[(scheme, s, *key)]
            for scheme, s in row_keys
            if (scheme, s, *key) in cells
        )
        for key in col_keys
    }

    label_width = max(len(f"{scheme} s={s}") for scheme, s in row_keys)
    headers = [f"g0={g:g} l={lam:g}" for g, lam in col_keys]
    widths = [max(len(h), 14) for h in headers]
    header_line = " " * label_width + " | " + " | ".join(
        h.rjust(w) for h, w in zip(headers, widths)
    )
    out.append(header_line)
    out.append("-" * len(header_line))
    for scheme, s in row_keys:
        label = f"{scheme} s={s}".ljust(label_width)
        cols = []
        for key, width in zip(col_keys, widths):
            value = cells.get((scheme, s, *key))
            if value is None:
                cols.append("-".rjust(width))
                continue
            mark = "*" if value == col_max[key] else " "
            cols.append(f"{value:.2f}{mark}".rjust(width))
        out.append(f"{label} | " + " | ".join(cols))

    best = max(rows, key=lambda r: r.annual_profit)
    out.append(
        f"best: scheme={best.scheme} gamma0={best.gamma0:g} lambda={best.lam:g} "
        f"s={best.s} annual_profit={best.annual_profit:.2f} "
        f"uplift={best.uplift_pct:.2f}%"
    )
    return "\n".join(out)
