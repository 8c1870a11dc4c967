"""Market-data ingestion, synthesis, and forecast-error diagnostics.

Raw inputs follow the AEMO CSV interchange convention: each line's first
field marks the record kind, C for comments, I for the column header of a
(report, table) pair, D for data rows bound to the most recent matching
header. Parsed rows are normalized to plain CSV so backtests never touch
raw archives twice.

Forecast lead time is 1-based: lead 1 is the half-hour starting at the
snapshot's own run time.
"""

from __future__ import annotations

import csv
import io
import logging
import zipfile
from bisect import bisect_right
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .domain import HALF_HOUR, is_half_hour_aligned

log = logging.getLogger(__name__)

FIVE_MIN = timedelta(minutes=5)
SYNTH_START = datetime(2024, 1, 1, 4, 0)
SYNTH_REGION = "SYN1"
FORECAST_CSV_HEADER = ["run_time", "target_time", "region", "price"]
ACTUALS_CSV_HEADER = ["interval_start", "region", "price"]


class AemoFormatError(ValueError):
    """Malformed raw input; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DataValidationError(ValueError):
    """Snapshot or series content violates an invariant."""


class DataCoverageError(ValueError):
    """Loaded data does not cover what the requested operation needs."""


@dataclass(frozen=True)
class AemoTableSpec:
    """Which (report, table) to extract and how its columns are named.

    run_time_col is None for tables without a forecast run time, such as
    actual-price reports. Headers live at field index 4 of an I record
    (after the record marker, report type, table name, and version).
    """

    report_type: str
    table: str
    region_col: str
    run_time_col: str | None
    target_time_col: str
    price_col: str
    timestamp_format: str = "%Y/%m/%d %H:%M:%S"


DEFAULT_FORECAST_SPEC = AemoTableSpec(
    report_type="PREDISPATCH",
    table="REGION_PRICES",
    region_col="REGIONID",
    run_time_col="PREDISPATCH_RUN_DATETIME",
    target_time_col="DATETIME",
    price_col="RRP",
)

DEFAULT_ACTUAL_SPEC = AemoTableSpec(
    report_type="DISPATCH",
    table="PRICE",
    region_col="REGIONID",
    run_time_col=None,
    target_time_col="SETTLEMENTDATE",
    price_col="RRP",
)


@dataclass(frozen=True)
class ParsedRow:
    """One data record projected onto the spec's columns."""

    region: str
    run_time: datetime | None
    target_time: datetime
    price: float


@dataclass(frozen=True)
class ForecastSnapshot:
    """One forecast run: consecutive half-hour prices from run_time on."""

    run_time: datetime
    region: str
    entries: tuple[tuple[datetime, float], ...]

    def prices(self) -> np.ndarray:
        return np.array([price for _, price in self.entries], dtype=np.float64)

    def targets(self) -> tuple[datetime, ...]:
        return tuple(target for target, _ in self.entries)


class ForecastIndex:
    """Read-only snapshot collection keyed by run time."""

    def __init__(self, snapshots: list[ForecastSnapshot]):
        ordered = sorted(snapshots, key=lambda s: s.run_time)
        self._by_run = {s.run_time: s for s in ordered}
        if len(self._by_run) != len(ordered):
            raise DataValidationError("duplicate snapshot run_time in index")
        self._run_times = [s.run_time for s in ordered]

    def __len__(self) -> int:
        return len(self._run_times)

    def __contains__(self, run_time: datetime) -> bool:
        return run_time in self._by_run

    def run_times(self) -> list[datetime]:
        return list(self._run_times)

    def snapshots(self) -> list[ForecastSnapshot]:
        return [self._by_run[t] for t in self._run_times]

    def get(self, run_time: datetime) -> ForecastSnapshot | None:
        return self._by_run.get(run_time)

    def latest_at_or_before(self, t: datetime) -> ForecastSnapshot | None:
        pos = bisect_right(self._run_times, t)
        if pos == 0:
            return None
        return self._by_run[self._run_times[pos - 1]]


@dataclass(frozen=True)
class ActualPriceSeries:
    """Five-minute settlement prices for one region."""

    region: str
    entries: tuple[tuple[datetime, float], ...]

    def half_hour_means(self) -> dict[datetime, float]:
        """Mean of the six 5-minute prices per covered half-hour."""
        groups: dict[datetime, list[float]] = {}
        for ts, price in self.entries:
            start = ts.replace(minute=(ts.minute // 30) * 30, second=0, microsecond=0)
            groups.setdefault(start, []).append(price)
        return {start: float(np.mean(vals)) for start, vals in sorted(groups.items())}

    def half_hour_prices(self) -> dict[datetime, list[float]]:
        """The six 5-minute prices per covered half-hour, in time order."""
        groups: dict[datetime, list[float]] = {}
        for ts, price in self.entries:
            start = ts.replace(minute=(ts.minute // 30) * 30, second=0, microsecond=0)
            groups.setdefault(start, []).append(price)
        return dict(sorted(groups.items()))


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic scenario parameters.

    The true series is a daily sinusoid plus seeded spikes; snapshots see
    the true series corrupted by Gaussian noise whose sigma grows linearly
    with lead time, plus phantom spikes visible only beyond the lead
    threshold (they vanish as the target approaches, the failure mode that
    discounting targets).
    """

    days: int = 30
    base_price: float = 60.0
    daily_amplitude: float = 40.0
    spike_probability: float = 0.1
    spike_magnitude: float = 500.0
    phantom_lead_threshold: int = 8
    noise_scale: float = 0.5
    seed: int = 0


def validate_synth_config(config: SynthConfig) -> list[str]:
    violations: list[str] = []
    if config.days < 1:
        violations.append("days: must be >= 1")
    if config.base_price < 0:
        violations.append("base_price: must be >= 0")
    if config.daily_amplitude < 0:
        violations.append("daily_amplitude: must be >= 0")
    if not 0 <= config.spike_probability <= 1:
        violations.append("spike_probability: must be in [0, 1]")
    if config.spike_magnitude < 0:
        violations.append("spike_magnitude: must be >= 0")
    if config.phantom_lead_threshold < 0:
        violations.append("phantom_lead_threshold: must be >= 0")
    if config.noise_scale < 0:
        violations.append("noise_scale: must be >= 0")
    return violations


def _open_text(source) -> tuple[str, str]:
    """Resolve path, bytes, or stream input to (text, display name)."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        data = path.read_bytes()
        name = str(path)
    elif isinstance(source, bytes):
        data = source
        name = "<bytes>"
    elif hasattr(source, "read"):
        data = source.read()
        if isinstance(data, str):
            return data, "<stream>"
        name = "<stream>"
    else:
        raise TypeError(f"unsupported input type {type(source)!r}")
    if data[:4] == b"PK\x03\x04" or (isinstance(source, (str, Path)) and str(source).lower().endswith(".zip")):
        with zipfile.ZipFile(io.BytesIO(data)) as archive:
            members = archive.namelist()
            if len(members) != 1:
                raise AemoFormatError(
                    0, f"zip archive must contain exactly one file, found {len(members)}"
                )
            data = archive.read(members[0])
            name = f"{name}:{members[0]}"
    return data.decode("utf-8"), name


def parse_aemo_csv(source, spec: AemoTableSpec) -> list[ParsedRow]:
    """Extract the spec's table from a C/I/D report.

    Accepts a path, raw bytes, or a readable stream; single-file zip
    archives are unpacked transparently. Rows of other tables are ignored;
    a file without the requested table parses to an empty list.
    """
    required = [spec.region_col, spec.target_time_col, spec.price_col]
    if spec.run_time_col is not None:
        required.append(spec.run_time_col)
    if len(set(required)) != len(required):
        raise ValueError("table spec column names must be distinct")

    text, _name = _open_text(source)
    rows: list[ParsedRow] = []
    header_seen = False
    column_index: dict[str, int] | None = None
    current_matches = False
    reader = csv.reader(io.StringIO(text))
    for fields in reader:
        line = reader.line_num
        if not fields or (len(fields) == 1 and not fields[0].strip()):
            continue
        kind = fields[0]
        if kind == "C":
            continue
        if kind == "I":
            header_seen = True
            if len(fields) < 4:
                raise AemoFormatError(line, "header record has fewer than 4 fields")
            current_matches = fields[1] == spec.report_type and fields[2] == spec.table
            if current_matches:
                names = fields[4:]
                column_index = {}
                for col in required:
                    if col not in names:
                        raise AemoFormatError(line, f"column {col!r} missing from header")
                    column_index[col] = 4 + names.index(col)
            continue
        if kind == "D":
            if not header_seen:
                raise AemoFormatError(line, "data record before any header record")
            if len(fields) < 3:
                raise AemoFormatError(line, "data record has fewer than 3 fields")
            if not (fields[1] == spec.report_type and fields[2] == spec.table):
                continue
            if column_index is None:
                raise AemoFormatError(line, "data record before its table's header record")
            rows.append(_project_row(fields, column_index, spec, line))
            continue
        raise AemoFormatError(line, f"unknown record kind {kind!r}")
    return rows


def _project_row(
    fields: list[str], column_index: dict[str, int], spec: AemoTableSpec, line: int
) -> ParsedRow:
    def take(col: str) -> str:
        idx = column_index[col]
        if idx >= len(fields):
            raise AemoFormatError(line, f"row too short for column {col!r}")
        return fields[idx]

    def take_time(col: str) -> datetime:
        raw = take(col)
        try:
            return datetime.strptime(raw, spec.timestamp_format)
        except ValueError:
            raise AemoFormatError(
                line, f"unparseable timestamp {raw!r} in column {col!r}"
            ) from None

    raw_price = take(spec.price_col)
    try:
        price = float(raw_price)
    except ValueError:
        raise AemoFormatError(
            line, f"unparseable price {raw_price!r} in column {spec.price_col!r}"
        ) from None
    run_time = take_time(spec.run_time_col) if spec.run_time_col is not None else None
    return ParsedRow(
        region=take(spec.region_col),
        run_time=run_time,
        target_time=take_time(spec.target_time_col),
        price=price,
    )


def serialize_aemo_rows(rows: list[ParsedRow], spec: AemoTableSpec) -> str:
    """Render rows back to the C/I/D layout (inverse of parse_aemo_csv)."""
    columns = [spec.region_col, spec.target_time_col, spec.price_col]
    if spec.run_time_col is not None:
        columns = [spec.region_col, spec.run_time_col, spec.target_time_col, spec.price_col]
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["C", "NEMP.WORLD", spec.report_type, "generated"])
    writer.writerow(["I", spec.report_type, spec.table, "1", *columns])
    for row in rows:
        values = {spec.region_col: row.region, spec.price_col: repr(row.price)}
        if spec.run_time_col is not None:
            if row.run_time is None:
                raise ValueError("row lacks run_time required by the table spec")
            values[spec.run_time_col] = row.run_time.strftime(spec.timestamp_format)
        values[spec.target_time_col] = row.target_time.strftime(spec.timestamp_format)
        writer.writerow(["D", spec.report_type, spec.table, "1", *[values[c] for c in columns]])
    writer.writerow(["C", "END OF REPORT"])
    return out.getvalue()


def _resolve_region(rows: list[ParsedRow], region: str | None, what: str) -> str:
    regions = sorted({row.region for row in rows})
    if region is not None:
        return region
    if len(regions) != 1:
        raise DataValidationError(
            f"{what} spans regions {regions}; pass an explicit region to select one"
        )
    return regions[0]


def _list_raw_files(directory) -> list[Path]:
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"not a directory: {root}")
    files = [
        p for p in sorted(root.iterdir())
        if p.is_file() and p.suffix.lower() in (".csv", ".zip")
    ]
    return files


def load_forecasts(
    directory,
    spec: AemoTableSpec = DEFAULT_FORECAST_SPEC,
    region: str | None = None,
    on_invalid: str = "fail",
) -> ForecastIndex:
    """Parse every raw file in a directory into a snapshot index.

    on_invalid selects fail-fast ("fail", default) or skip-with-warning
    ("skip") handling of snapshots that violate their invariants.
    """
    if spec.run_time_col is None:
        raise ValueError("forecast table spec must define a run-time column")
    rows: list[ParsedRow] = []
    for path in _list_raw_files(directory):
        rows.extend(parse_aemo_csv(path, spec))
    return build_forecast_index(rows, region=region, on_invalid=on_invalid)


def build_forecast_index(
    rows: list[ParsedRow], region: str | None = None, on_invalid: str = "fail"
) -> ForecastIndex:
    if on_invalid not in ("fail", "skip"):
        raise ValueError(f"unknown on_invalid policy {on_invalid!r}")
    if not rows:
        return ForecastIndex([])
    chosen = _resolve_region(rows, region, "forecast data")
    grouped: dict[datetime, dict[datetime, float]] = {}
    poisoned: set[datetime] = set()
    for row in rows:
        if row.region != chosen:
            continue
        if row.run_time is None:
            raise DataValidationError("forecast row lacks a run_time")
        targets = grouped.setdefault(row.run_time, {})
        existing = targets.get(row.target_time)
        if existing is not None and existing != row.price:
            _handle_invalid(
                on_invalid,
                f"snapshot {row.run_time.isoformat()}: conflicting prices for "
                f"target {row.target_time.isoformat()}",
            )
            poisoned.add(row.run_time)
            continue
        targets[row.target_time] = row.price

    snapshots: list[ForecastSnapshot] = []
    for run_time in sorted(grouped):
        if run_time in poisoned:
            continue
        problem = _snapshot_problem(run_time, grouped[run_time])
        if problem is not None:
            _handle_invalid(on_invalid, problem)
            continue
        entries = tuple(sorted(grouped[run_time].items()))
        snapshots.append(ForecastSnapshot(run_time=run_time, region=chosen, entries=entries))
    return ForecastIndex(snapshots)


def _handle_invalid(on_invalid: str, message: str) -> None:
    if on_invalid == "fail":
        raise DataValidationError(message)
    log.warning("skipping invalid snapshot: %s", message)


def _snapshot_problem(run_time: datetime, targets: dict[datetime, float]) -> str | None:
    label = f"snapshot {run_time.isoformat()}"
    if not is_half_hour_aligned(run_time):
        return f"{label}: run_time not half-hour aligned"
    if not targets:
        return f"{label}: empty"
    ordered = sorted(targets)
    if len(ordered) > 80:
        return f"{label}: {len(ordered)} entries exceeds 80"
    first = ordered[0]
    if first < run_time:
        return f"{label}: first target {first.isoformat()} precedes run_time"
    for i, target in enumerate(ordered):
        if not is_half_hour_aligned(target):
            return f"{label}: target {target.isoformat()} not half-hour aligned"
        if i > 0 and target - ordered[i - 1] != HALF_HOUR:
            return (
                f"{label}: gap between {ordered[i - 1].isoformat()} "
                f"and {target.isoformat()}"
            )
    return None


def load_actuals(
    source, spec: AemoTableSpec = DEFAULT_ACTUAL_SPEC, region: str | None = None
) -> ActualPriceSeries:
    """Parse one raw file of 5-minute actual prices."""
    rows = parse_aemo_csv(source, spec)
    return build_actual_series(rows, region=region)


def build_actual_series(rows: list[ParsedRow], region: str | None = None) -> ActualPriceSeries:
    if not rows:
        raise DataValidationError("no actual-price rows found")
    chosen = _resolve_region(rows, region, "actual-price data")
    by_time: dict[datetime, float] = {}
    for row in rows:
        if row.region != chosen:
            continue
        ts = row.target_time
        if ts.minute % 5 != 0 or ts.second != 0 or ts.microsecond != 0:
            raise DataValidationError(
                f"actual price at {ts.isoformat()} is not 5-minute aligned"
            )
        if ts in by_time and by_time[ts] != row.price:
            raise DataValidationError(
                f"conflicting actual prices at {ts.isoformat()}"
            )
        by_time[ts] = row.price
    ordered = sorted(by_time.items())
    _check_half_hour_completeness(ordered)
    return ActualPriceSeries(region=chosen, entries=tuple(ordered))


def _check_half_hour_completeness(ordered: list[tuple[datetime, float]]) -> None:
    groups: dict[datetime, set[datetime]] = {}
    for ts, _price in ordered:
        start = ts.replace(minute=(ts.minute // 30) * 30, second=0, microsecond=0)
        groups.setdefault(start, set()).add(ts)
    for start, seen in sorted(groups.items()):
        expected = {start + i * FIVE_MIN for i in range(6)}
        missing = sorted(expected - seen)
        if missing:
            names = ", ".join(ts.isoformat() for ts in missing)
            raise DataValidationError(
                f"half-hour {start.isoformat()} is missing 5-minute intervals: {names}"
            )


def synth_generate(config: SynthConfig) -> tuple[ActualPriceSeries, ForecastIndex]:
    """Deterministic synthetic scenario from a seeded generator."""
    violations = validate_synth_config(config)
    if violations:
        raise ValueError("invalid synthetic config: " + "; ".join(violations))
    rng = np.random.default_rng(config.seed)
    n_int = config.days * 48
    phase = 2.0 * np.pi * np.arange(48) / 48.0
    daily = config.base_price + config.daily_amplitude * np.sin(phase)
    true = np.tile(daily, config.days)

    phantoms: list[tuple[int, float]] = []
    for day in range(config.days):
        if rng.random() < config.spike_probability:
            idx = int(rng.integers(0, 48))
            true[day * 48 + idx] += config.spike_magnitude
        if rng.random() < config.spike_probability:
            idx = int(rng.integers(0, 48))
            phantoms.append((day * 48 + idx, config.spike_magnitude))

    starts = [SYNTH_START + i * HALF_HOUR for i in range(n_int)]
    actual_entries = []
    for i in range(n_int):
        for j in range(6):
            actual_entries.append((starts[i] + j * FIVE_MIN, float(true[i])))
    actuals = ActualPriceSeries(region=SYNTH_REGION, entries=tuple(actual_entries))

    snapshots = []
    for k in range(n_int):
        h = min(80, n_int - k)
        leads = np.arange(1, h + 1, dtype=np.float64)
        prices = true[k : k + h] + config.noise_scale * leads * rng.standard_normal(h)
        for idx, magnitude in phantoms:
            lead = idx - k + 1
            if lead > config.phantom_lead_threshold and 1 <= lead <= h:
                prices[idx - k] += magnitude
        entries = tuple((starts[k + j], float(prices[j])) for j in range(h))
        snapshots.append(
            ForecastSnapshot(run_time=starts[k], region=SYNTH_REGION, entries=entries)
        )
    return actuals, ForecastIndex(snapshots)


@dataclass(frozen=True)
class LeadErrorStats:
    """Error statistics of forecasts at one lead time."""

    lead_time: int
    mape_pct: float
    max_ape_pct: float
    samples: int
    excluded: int


def forecast_error_stats(
    snapshots: ForecastIndex, actuals: ActualPriceSeries
) -> list[LeadErrorStats]:
    """Per-lead-time MAPE and max-APE against half-hour actual means.

    Intervals whose actual mean has magnitude below 1 $/MWh are excluded
    from the percentage statistics (division guard) and counted in the
    excluded column instead.
    """
    means = actuals.half_hour_means()
    sums: dict[int, float] = {}
    maxs: dict[int, float] = {}
    counts: dict[int, int] = {}
    excluded: dict[int, int] = {}
    overlap = 0
    for snapshot in snapshots.snapshots():
        for target, price in snapshot.entries:
            mean = means.get(target)
            if mean is None:
                continue
            overlap += 1
            delta = target - snapshot.run_time
            lead = int(delta / HALF_HOUR) + 1
            if abs(mean) < 1.0:
                excluded[lead] = excluded.get(lead, 0) + 1
                continue
            ape = abs(price - mean) / abs(mean) * 100.0
            sums[lead] = sums.get(lead, 0.0) + ape
            maxs[lead] = max(maxs.get(lead, 0.0), ape)
            counts[lead] = counts.get(lead, 0) + 1
    if overlap == 0:
        raise DataCoverageError("forecasts and actuals have no overlapping coverage")
    stats = []
    for lead in sorted(set(counts) | set(excluded)):
        n = counts.get(lead, 0)
        stats.append(
            LeadErrorStats(
                lead_time=lead,
                mape_pct=sums[lead] / n if n else float("nan"),
                max_ape_pct=maxs[lead] if n else float("nan"),
                samples=n,
                excluded=excluded.get(lead, 0),
            )
        )
    return stats


def write_forecasts_csv(index: ForecastIndex, path) -> None:
    """Normalized forecast CSV: run_time,target_time,region,price."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(FORECAST_CSV_HEADER)
        for snapshot in index.snapshots():
            for target, price in snapshot.entries:
                writer.writerow(
                    [
                        snapshot.run_time.isoformat(),
                        target.isoformat(),
                        snapshot.region,
                        repr(price),
                    ]
                )


def read_forecasts_csv(path, on_invalid: str = "fail") -> ForecastIndex:
    rows = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != FORECAST_CSV_HEADER:
            raise DataValidationError(
                f"unexpected forecast CSV header {header!r} in {path}"
            )
        for fields in reader:
            if not fields:
                continue
            rows.append(
                ParsedRow(
                    region=fields[2],
                    run_time=datetime.fromisoformat(fields[0]),
                    target_time=datetime.fromisoformat(fields[1]),
                    price=float(fields[3]),
                )
            )
    return build_forecast_index(rows, on_invalid=on_invalid)


def write_actuals_csv(series: ActualPriceSeries, path) -> None:
    """Normalized actuals CSV: interval_start,region,price."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(ACTUALS_CSV_HEADER)
        for ts, price in series.entries:
            writer.writerow([ts.isoformat(), series.region, repr(price)])


def read_actuals_csv(path) -> ActualPriceSeries:
    rows = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != ACTUALS_CSV_HEADER:
            raise DataValidationError(
                f"unexpected actuals CSV header {header!r} in {path}"
            )
        for fields in reader:
            if not fields:
                continue
            rows.append(
                ParsedRow(
                    region=fields[1],
                    run_time=None,
                    target_time=datetime.fromisoformat(fields[0]),
                    price=float(fields[2]),
                )
            )
    return build_actual_series(rows)


def write_error_stats_csv(stats: list[LeadErrorStats], path) -> None:
    """Error-stats CSV: lead_time,mape_pct,max_ape_pct,samples,excluded."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["lead_time", "mape_pct", "max_ape_pct", "samples", "excluded"])
        for row in stats:
            writer.writerow(
                [
                    row.lead_time,
                    f"{row.mape_pct:.6f}",
                    f"{row.max_ape_pct:.6f}",
                    row.samples,
                    row.excluded,
                ]
            )
