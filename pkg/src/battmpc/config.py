"""JSON run configuration: schema version 1, strict key checking.

Unknown keys are rejected with their full path so typos surface instead
of silently falling back to defaults.
"""

from __future__ import annotations

import json
from dataclasses import fields, replace
from datetime import datetime

from .backtest import POLICIES, BacktestConfig, RawDataSource
from .discount import DiscountSpec
from .domain import BatteryParams
from .marketdata import (
    DEFAULT_ACTUAL_SPEC,
    DEFAULT_FORECAST_SPEC,
    AemoTableSpec,
    SynthConfig,
)
from .solver import SolverSettings

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """The run-config document is malformed or fails validation."""


def _require_mapping(doc, path: str) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected an object, got {type(doc).__name__}")
    return doc


def _reject_unknown(doc: dict, allowed: set[str], path: str) -> None:
    unknown = sorted(set(doc) - allowed)
    if unknown:
        keys = ", ".join(f"{path}.{key}" if path else key for key in unknown)
        raise ConfigError(f"unknown config key(s): {keys}")


def _parse_section(doc: dict, path: str, cls, rename=None, coerce=None):
    """Build a dataclass from a JSON object, rejecting unknown keys."""
    rename = rename or {}
    coerce = coerce or {}
    names = {f.name for f in fields(cls)}
    allowed = {rename.get(name, name) for name in names}
    _reject_unknown(doc, allowed, path)
    kwargs = {}
    for f in fields(cls):
        key = rename.get(f.name, f.name)
        if key not in doc:
            continue
        value = doc[key]
        if f.name in coerce:
            value = coerce[f.name](value, f"{path}.{key}")
        kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _as_float(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {type(value).__name__}")
    return float(value)


def _as_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {type(value).__name__}")
    return value


def _as_str(value, path: str) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string, got {type(value).__name__}")
    return value


def _as_bool(value, path: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{path}: expected a boolean, got {type(value).__name__}")
    return value


def _parse_timestamp(value, path: str) -> datetime:
    text = _as_str(value, path)
    try:
        return datetime.fromisoformat(text)
    except ValueError as exc:
        raise ConfigError(f"{path}: not an ISO timestamp: {text!r}") from exc


def _coercions(cls) -> dict:
    out = {}
    hints = {f.name: f.type for f in fields(cls)}
    for name, hint in hints.items():
        for key, fn in (("float", _as_float), ("int", _as_int), ("str", _as_str), ("bool", _as_bool)):
            if hint == key or hint == f"{key} | None":
                out[name] = fn
                break
    return out


def _parse_table_spec(doc: dict, path: str, default: AemoTableSpec) -> AemoTableSpec:
    doc = _require_mapping(doc, path)
    allowed = {f.name for f in fields(AemoTableSpec)}
    _reject_unknown(doc, allowed, path)
    kwargs = {}
    for f in fields(AemoTableSpec):
        if f.name not in doc:
            continue
        value = doc[f.name]
        if value is not None:
            value = _as_str(value, f"{path}.{f.name}")
        kwargs[f.name] = value
    return replace(default, **kwargs)


def _parse_data(doc: dict, path: str):
    doc = _require_mapping(doc, path)
    if "synthetic" in doc:
        _reject_unknown(doc, {"synthetic"}, path)
        synth_doc = _require_mapping(doc["synthetic"], f"{path}.synthetic")
        return _parse_section(
            synth_doc,
            f"{path}.synthetic",
            SynthConfig,
            coerce=_coercions(SynthConfig),
        )
    _reject_unknown(doc, {"raw_dir", "actuals_file", "table_spec", "region"}, path)
    for key in ("raw_dir", "actuals_file"):
        if key not in doc:
            raise ConfigError(f"{path}.{key}: required for raw data sources")
    forecast_spec = DEFAULT_FORECAST_SPEC
    actual_spec = DEFAULT_ACTUAL_SPEC
    if "table_spec" in doc:
        spec_doc = _require_mapping(doc["table_spec"], f"{path}.table_spec")
        _reject_unknown(spec_doc, {"forecast", "actual"}, f"{path}.table_spec")
        if "forecast" in spec_doc:
            forecast_spec = _parse_table_spec(
                spec_doc["forecast"], f"{path}.table_spec.forecast", forecast_spec
            )
        if "actual" in spec_doc:
            actual_spec = _parse_table_spec(
                spec_doc["actual"], f"{path}.table_spec.actual", actual_spec
            )
    region = None
    if "region" in doc:
        region = _as_str(doc["region"], f"{path}.region")
    return RawDataSource(
        raw_dir=_as_str(doc["raw_dir"], f"{path}.raw_dir"),
        actuals_file=_as_str(doc["actuals_file"], f"{path}.actuals_file"),
        forecast_spec=forecast_spec,
        actual_spec=actual_spec,
        region=region,
    )


def parse_run_config(doc: dict) -> BacktestConfig:
    """Build a BacktestConfig from a parsed JSON document."""
    doc = _require_mapping(doc, "config")
    _reject_unknown(
        doc,
        {"version", "battery", "discount", "data", "window", "solver", "policy", "initial_soc"},
        "",
    )
    if "version" not in doc:
        raise ConfigError("version: required")
    if doc["version"] != CONFIG_VERSION:
        raise ConfigError(
            f"version: expected {CONFIG_VERSION}, got {doc['version']!r}"
        )

    battery = BatteryParams()
    if "battery" in doc:
        battery = _parse_section(
            _require_mapping(doc["battery"], "battery"),
            "battery",
            BatteryParams,
            coerce=_coercions(BatteryParams),
        )
    discount = DiscountSpec()
    if "discount" in doc:
        discount = _parse_section(
            _require_mapping(doc["discount"], "discount"),
            "discount",
            DiscountSpec,
            rename={"lam": "lambda"},
            coerce={"scheme": _as_str, "gamma0": _as_float, "lam": _as_float, "s": _as_int},
        )
    if "data" not in doc:
        raise ConfigError("data: required")
    data = _parse_data(doc["data"], "data")

    start = end = None
    if "window" in doc:
        window = _require_mapping(doc["window"], "window")
        _reject_unknown(window, {"start", "end"}, "window")
        if "start" in window:
            start = _parse_timestamp(window["start"], "window.start")
        if "end" in window:
            end = _parse_timestamp(window["end"], "window.end")

    solver = SolverSettings()
    if "solver" in doc:
        solver = _parse_section(
            _require_mapping(doc["solver"], "solver"),
            "solver",
            SolverSettings,
            coerce=_coercions(SolverSettings),
        )

    policy = "fail"
    if "policy" in doc:
        policy = _as_str(doc["policy"], "policy")
        if policy not in POLICIES:
            raise ConfigError(
                f"policy: unknown policy {policy!r}; expected one of {', '.join(POLICIES)}"
            )
    initial_soc = None
    if "initial_soc" in doc:
        initial_soc = _as_float(doc["initial_soc"], "initial_soc")

    return BacktestConfig(
        battery=battery,
        discount=discount,
        data=data,
        initial_soc=initial_soc,
        start=start,
        end=end,
        solver=solver,
        policy=policy,
    )


def load_run_config(path) -> BacktestConfig:
    """Read and parse a JSON run-config file."""
    with open(path, encoding="utf-8") as handle:
        try:
            doc = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return parse_run_config(doc)
