"""Command-line entry point.

Commands: parse, synth, backtest, sweep, error-stats. Machine-readable
results go to stdout and files under --out; logs and progress go to
stderr. Exit codes: 0 success, 1 I/O failure, 2 config or format error,
3 data-coverage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import fields, replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .backtest import (
    RawDataSource,
    SweepGrid,
    annual_profit,
    compare_report,
    load_data,
    run_backtest,
    run_sweep,
    write_ledger_csv,
    write_sweep_csv,
)
from .config import ConfigError, load_run_config
from .marketdata import (
    DEFAULT_ACTUAL_SPEC,
    DEFAULT_FORECAST_SPEC,
    AemoFormatError,
    DataCoverageError,
    SynthConfig,
    build_actual_series,
    build_forecast_index,
    forecast_error_stats,
    parse_aemo_csv,
    synth_generate,
    write_actuals_csv,
    write_error_stats_csv,
    write_forecasts_csv,
)

log = logging.getLogger("battmpc")

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_DATA = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="path to a JSON run-config file")
    parser.add_argument(
        "--out", default=".", help="output directory for files (default: .)"
    )
    parser.add_argument(
        "--jobs", type=int, default=1, help="worker processes for sweeps"
    )
    parser.add_argument(
        "--seed", type=int, default=None, help="override the synthetic-data seed"
    )
    parser.add_argument(
        "--log-level",
        default="warning",
        choices=("debug", "info", "warning", "error"),
        help="stderr log verbosity",
    )


def _add_source_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--raw-dir", help="directory of raw forecast files")
    parser.add_argument("--actuals-file", help="raw actual-price file")
    parser.add_argument("--region", help="region identifier to select")
    for side in ("forecast", "actual"):
        parser.add_argument(f"--{side}-report", help=f"{side} table report type")
        parser.add_argument(f"--{side}-table", help=f"{side} table name")
        parser.add_argument(f"--{side}-region-col", help=f"{side} region column")
        parser.add_argument(f"--{side}-target-col", help=f"{side} target-time column")
        parser.add_argument(f"--{side}-price-col", help=f"{side} price column")
    parser.add_argument("--forecast-run-col", help="forecast run-time column")
    parser.add_argument("--timestamp-format", help="strptime format for timestamps")


def _add_synth_flags(parser: argparse.ArgumentParser) -> None:
    for f in fields(SynthConfig):
        if f.name == "seed":
            continue
        kind = int if f.type == "int" else float
        parser.add_argument(
            f"--{f.name.replace('_', '-')}", type=kind, default=None, dest=f.name
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="battmpc",
        description="battery arbitrage backtesting with discounted-horizon dispatch",
    )
    parser.add_argument("--version", action="version", version=f"battmpc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_parse = sub.add_parser(
        "parse", help="normalize raw market data files into flat CSVs"
    )
    _add_common(p_parse)
    _add_source_flags(p_parse)

    p_synth = sub.add_parser("synth", help="generate a synthetic market dataset")
    _add_common(p_synth)
    _add_synth_flags(p_synth)

    p_backtest = sub.add_parser("backtest", help="run one receding-horizon backtest")
    _add_common(p_backtest)

    p_sweep = sub.add_parser("sweep", help="run the hyperparameter sweep")
    _add_common(p_sweep)
    p_sweep.add_argument("--schemes", help="comma-separated scheme list")
    p_sweep.add_argument("--gamma0s", help="comma-separated gamma0 list")
    p_sweep.add_argument("--lambdas", help="comma-separated lambda list")
    p_sweep.add_argument("--s-values", help="comma-separated penalty exponents")

    p_stats = sub.add_parser(
        "error-stats", help="forecast error statistics per lead time"
    )
    _add_common(p_stats)
    p_stats.add_argument("--forecast-dir", help="directory of raw forecast files")
    p_stats.add_argument("--actuals-file", help="raw actual-price file")
    p_stats.add_argument("--region", help="region identifier to select")

    return parser


def _load_config(args):
    if not args.config:
        raise ConfigError("--config is required for this command")
    config = load_run_config(args.config)
    if args.seed is not None and isinstance(config.data, SynthConfig):
        config = replace(config, data=replace(config.data, seed=args.seed))
    return config


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_meta(out: Path, command: str, started: float, extra=None) -> None:
    """Wall-clock and environment go to a sidecar, never into data files."""
    meta = {
        "command": command,
        "package_version": __version__,
        "started_utc": datetime.fromtimestamp(started, tz=timezone.utc).isoformat(),
        "duration_seconds": round(time.time() - started, 3),
    }
    if extra:
        meta.update(extra)
    with open(out / "run_meta.json", "w", encoding="utf-8") as handle:
        json.dump(meta, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _spec_overrides(args, side: str, base):
    updates = {}
    mapping = {
        "report_type": f"{side}_report",
        "table": f"{side}_table",
        "region_col": f"{side}_region_col",
        "target_time_col": f"{side}_target_col",
        "price_col": f"{side}_price_col",
    }
    if side == "forecast":
        mapping["run_time_col"] = "forecast_run_col"
    mapping["timestamp_format"] = "timestamp_format"
    for field_name, arg_name in mapping.items():
        value = getattr(args, arg_name, None)
        if value is not None:
            updates[field_name] = value
    return replace(base, **updates) if updates else base


def _source_from_args(args) -> RawDataSource | None:
    """Raw data paths from the command line, config as fallback."""
    base = None
    if args.config:
        config = load_run_config(args.config)
        if isinstance(config.data, RawDataSource):
            base = config.data
    raw_dir = getattr(args, "raw_dir", None) or getattr(args, "forecast_dir", None)
    actuals = getattr(args, "actuals_file", None)
    region = getattr(args, "region", None)
    if base is None and raw_dir is None and actuals is None:
        return None
    forecast_spec = _spec_overrides(
        args, "forecast", base.forecast_spec if base else DEFAULT_FORECAST_SPEC
    )
    actual_spec = _spec_overrides(
        args, "actual", base.actual_spec if base else DEFAULT_ACTUAL_SPEC
    )
    return RawDataSource(
        raw_dir=raw_dir or (base.raw_dir if base else ""),
        actuals_file=actuals or (base.actuals_file if base else ""),
        forecast_spec=forecast_spec,
        actual_spec=actual_spec,
        region=region or (base.region if base else None),
    )


def cmd_parse(args) -> int:
    started = time.time()
    out = _out_dir(args)
    source = _source_from_args(args)
    if source is None:
        raise ConfigError("parse needs --raw-dir/--actuals-file or a raw-data config")
    wrote = []
    if source.raw_dir:
        root = Path(source.raw_dir)
        if not root.is_dir():
            raise FileNotFoundError(f"not a directory: {root}")
        rows = []
        for path in sorted(root.iterdir()):
            if path.is_file() and path.suffix.lower() in (".csv", ".zip"):
                rows.extend(parse_aemo_csv(path, source.forecast_spec))
        forecasts = build_forecast_index(rows, region=source.region)
        write_forecasts_csv(forecasts, out / "forecasts.csv")
        n_rows = sum(len(snap.entries) for snap in forecasts.snapshots())
        if n_rows == 0:
            log.warning("no forecast rows found under %s", root)
        print(
            f"forecasts: {len(forecasts)} snapshots, {n_rows} rows", file=sys.stderr
        )
        wrote.append("forecasts.csv")
    if source.actuals_file:
        rows = parse_aemo_csv(source.actuals_file, source.actual_spec)
        actuals = build_actual_series(rows, region=source.region)
        write_actuals_csv(actuals, out / "actuals.csv")
        print(f"actuals: {len(actuals.entries)} rows", file=sys.stderr)
        wrote.append("actuals.csv")
    _write_meta(out, "parse", started, {"files": wrote})
    return EXIT_OK


def cmd_synth(args) -> int:
    started = time.time()
    out = _out_dir(args)
    base = SynthConfig()
    if args.config:
        config = _load_config(args)
        if not isinstance(config.data, SynthConfig):
            raise ConfigError("synth requires a config with a data.synthetic section")
        base = config.data
    updates = {
        f.name: getattr(args, f.name)
        for f in fields(SynthConfig)
        if f.name != "seed" and getattr(args, f.name, None) is not None
    }
    if args.seed is not None:
        updates["seed"] = args.seed
    synth = replace(base, **updates)
    actuals, forecasts = synth_generate(synth)
    write_forecasts_csv(forecasts, out / "forecasts.csv")
    write_actuals_csv(actuals, out / "actuals.csv")
    print(
        f"generated {len(forecasts)} snapshots, {len(actuals.entries)} actual rows "
        f"(seed {synth.seed})",
        file=sys.stderr,
    )
    _write_meta(out, "synth", started, {"seed": synth.seed})
    return EXIT_OK


def cmd_backtest(args) -> int:
    started = time.time()
    config = _load_config(args)
    out = _out_dir(args)
    ledger = run_backtest(config)
    write_ledger_csv(ledger, out / "ledger.csv")
    from .report import render_ledger_figure

    render_ledger_figure(ledger, out / "ledger.png")
    profit = annual_profit(ledger)
    print(
        f"annual_profit={profit.total:.6f} entries={profit.count} "
        f"solves={ledger.solve_count} infeasible={ledger.infeasible_count} "
        f"max_iterations={ledger.max_iteration_count} skipped={ledger.skipped_count} "
        f"max_primal_residual={ledger.max_primal_residual:.3e} "
        f"max_dual_residual={ledger.max_dual_residual:.3e}"
    )
    _write_meta(out, "backtest", started)
    return EXIT_OK


def _csv_values(text: str, convert, what: str) -> tuple:
    try:
        return tuple(convert(part.strip()) for part in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"invalid --{what}: {exc}") from exc


def cmd_sweep(args) -> int:
    started = time.time()
    config = _load_config(args)
    out = _out_dir(args)
    grid = SweepGrid()
    if args.schemes:
        grid = replace(grid, schemes=_csv_values(args.schemes, str, "schemes"))
    if args.gamma0s:
        grid = replace(grid, gamma0s=_csv_values(args.gamma0s, float, "gamma0s"))
    if args.lambdas:
        grid = replace(grid, lams=_csv_values(args.lambdas, float, "lambdas"))
    if args.s_values:
        grid = replace(grid, ss=_csv_values(args.s_values, int, "s-values"))
    sweep = run_sweep(config, grid=grid, jobs=max(1, args.jobs))
    write_sweep_csv(sweep, out / "sweep.csv")
    from .report import render_sweep_figure

    render_sweep_figure(sweep, out / "sweep.png")
    print(compare_report(sweep))
    _write_meta(out, "sweep", started, {"jobs": max(1, args.jobs)})
    return EXIT_OK


def cmd_error_stats(args) -> int:
    started = time.time()
    out = _out_dir(args)
    source = _source_from_args(args)
    if source is not None and source.raw_dir and source.actuals_file:
        from .backtest import _load_actuals_file, _load_forecast_dir

        forecasts = _load_forecast_dir(source)
        actuals = _load_actuals_file(source)
    else:
        config = _load_config(args)
        forecasts, actuals = load_data(config)
    stats = forecast_error_stats(forecasts, actuals)
    write_error_stats_csv(stats, out / "error_stats.csv")
    for name, getter in (
        ("mape", lambda s: s.mape_pct),
        ("max_ape", lambda s: s.max_ape_pct),
    ):
        lines = [f"{s.lead_time} {getter(s):.6f}" for s in stats]
        with open(out / f"error_stats_{name}.dat", "w", encoding="utf-8") as handle:
            handle.write("\n".join(lines) + "\n")
    from .report import render_error_stats_figure

    render_error_stats_figure(stats, out / "error_stats.png")
    total = sum(s.samples for s in stats)
    print(f"leads={len(stats)} samples={total}")
    _write_meta(out, "error-stats", started)
    return EXIT_OK


_COMMANDS = {
    "parse": cmd_parse,
    "synth": cmd_synth,
    "backtest": cmd_backtest,
    "sweep": cmd_sweep,
    "error-stats": cmd_error_stats,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, args.log_level.upper()),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except DataCoverageError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except (ConfigError, AemoFormatError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
