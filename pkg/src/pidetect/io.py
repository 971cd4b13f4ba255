"""Run configuration, calibration files and table output.

Config files are line oriented::

    # comment
    [run]
    scenario = bias_vs_decay
    seed = 0xCAFE

    [params]
    rate_bright = 146.3 khz_counts
    detect_time = 10 us

Values may carry a unit suffix (``s``, ``ms``, ``us``, ``ns`` for times;
``hz``, ``khz_counts`` for rates). Everything is converted to SI on load,
and :func:`serialize_config` writes SI back out.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .detectors import CalibrationPair, DegenerateCalibrationError
from .params import REFERENCE_PARAMS, DetectionParams, ParameterError
from .stats import PhotonDistribution

log = logging.getLogger(__name__)

DEFAULT_SEED = 0xCAFE
FORMATS = ("csv", "json")

UNITS = {
    "s": 1.0,
    "ms": 1e-3,
    "us": 1e-6,
    "ns": 1e-9,
    "hz": 1.0,
    "khz_counts": 1e3,
}
_TIME_UNITS = {"s", "ms", "us", "ns"}
_RATE_UNITS = {"hz", "khz_counts"}

_PARAM_KINDS = {
    "rate_bright": "rate",
    "rate_background": "rate",
    "decay_time": "time",
    "detect_time": "time",
    "threshold": "int",
    "spinflip_error": "float",
    "subbin_time": "time",
    "subbin_count": "int",
}
_RUN_KINDS = {"scenario": "str", "seed": "int", "out": "str", "format": "str"}
_SIM_KINDS = {
    "n_shots": "int",
    "power_offset_db": "float",
    "spinflip_enabled": "bool",
    "prep_error": "float",
}
SECTIONS = ("run", "params", "simulate", "grid", "settings")


def apply_overrides(base: DetectionParams, overrides: Mapping) -> DetectionParams:
    """``base`` with ``overrides``; a new window without a sub-bin count re-derives it."""
    changes = dict(overrides)
    if not changes:
        return base
    if "detect_time" in changes and "subbin_count" not in changes:
        ts = changes.pop("subbin_time", None)
        base = base.with_detect_time(changes.pop("detect_time"), ts)
    return base.replace(**changes)


class ConfigError(ValueError):
    """Malformed or invalid configuration, with its location when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None, key: str | None = None):
        self.line, self.column, self.key = line, column, key
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)


class CalibrationError(ValueError):
    """A calibration file is malformed or fails validation."""


@dataclass(frozen=True)
class SimSettings:
    n_shots: int = 100_000
    power_offset_db: float = 0.0
    spinflip_enabled: bool = True
    prep_error: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    scenario: str | None = None
    seed: int = DEFAULT_SEED
    out: str | None = None
    format: str = "csv"
    param_overrides: Mapping[str, float] = field(default_factory=dict)
    simulate: SimSettings = SimSettings()
    grid: Mapping[str, tuple] = field(default_factory=dict)
    settings: Mapping[str, object] = field(default_factory=dict)

    def params_on(self, base: DetectionParams = REFERENCE_PARAMS) -> DetectionParams:
        """``base`` with the ``[params]`` overrides applied."""
        return apply_overrides(base, self.param_overrides)

    @property
    def params(self) -> DetectionParams:
        return self.params_on(REFERENCE_PARAMS)


# -- value parsing -------------------------------------------------------------------------

_NUM_UNIT = re.compile(r"^([^\s]+?)\s*([a-z_]+)?$", re.IGNORECASE)


def _parse_number(text: str, kind: str) -> float | int:
    text = text.strip()
    low = text.lower()
    if kind == "int":
        return int(low, 0)
    if low in ("inf", "+inf", "infinity"):
        return math.inf
    m = _NUM_UNIT.match(text)
    if not m:
        raise ValueError(f"cannot parse {text!r}")
    num, unit = m.group(1), (m.group(2) or "").lower()
    if unit:
        if unit not in UNITS:
            raise ValueError(f"unknown unit {unit!r}")
        if kind == "time" and unit not in _TIME_UNITS or kind == "rate" and unit not in _RATE_UNITS:
            raise ValueError(f"unit {unit!r} does not fit a {kind} value")
        if kind == "float":
            raise ValueError(f"{text!r} takes no unit")
    scale = UNITS.get(unit, 1.0)
    # divide by the exact reciprocal so "20 us" parses to the same float as 20e-6
    return float(num) / round(1 / scale) if scale < 1 else float(num) * scale


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_typed(text: str, kind: str):
    if kind == "str":
        return text.strip()
    if kind == "bool":
        return _parse_bool(text)
    return _parse_number(text, kind)


def _parse_free(text: str):
    """Scalar of unknown type: bool, int, number with unit, else string."""
    text = text.strip()
    try:
        return _parse_bool(text) if text.lower() in ("true", "false") else int(text, 0)
    except ValueError:
        pass
    for kind in ("float", "time", "rate"):
        try:
            return _parse_number(text, kind)
        except ValueError:
            continue
    return text


# -- config --------------------------------------------------------------------------------

def parse_config(text: str) -> RunConfig:
    """Parse config text into a validated :class:`RunConfig`."""
    section = None
    run: dict = {}
    params: dict = {}
    sim: dict = {}
    grid: dict = {}
    settings: dict = {}
    seen: dict[tuple[str, str], int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        stripped = line.strip()
        if not stripped:
            continue
        indent = len(line) - len(line.lstrip()) + 1
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError("unterminated section header", lineno, indent)
            section = stripped[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", lineno, indent)
            continue
        if "=" not in stripped:
            raise ConfigError("expected 'key = value'", lineno, indent)
        if section is None:
            raise ConfigError("key outside of a section", lineno, indent)
        key, value = (s.strip() for s in stripped.split("=", 1))
        eq = line.index("=") + 1
        value_col = eq + len(line[eq:]) - len(line[eq:].lstrip()) + 1
        if not key:
            raise ConfigError("empty key", lineno, indent)
        if (section, key) in seen:
            raise ConfigError(f"duplicate key {key!r} (first on line {seen[section, key]})", lineno, indent, key)
        seen[section, key] = lineno
        table = {"run": _RUN_KINDS, "params": _PARAM_KINDS, "simulate": _SIM_KINDS}.get(section)
        if table is not None and key not in table:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno, indent, key)
        try:
            if section == "grid":
                grid[key] = tuple(_parse_free(v) for v in value.split(",") if v.strip())
                if not grid[key]:
                    raise ValueError("grid axis needs at least one value")
            elif section == "settings":
                settings[key] = _parse_free(value)
            else:
                target = {"run": run, "params": params, "simulate": sim}[section]
                target[key] = _parse_typed(value, table[key])
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno, value_col, key) from None
    locations = {(sec, key): line for (sec, key), line in seen.items()}
    return _build_config(run, params, sim, grid, settings, locations)


def _build_config(run, params, sim, grid, settings, locations=None) -> RunConfig:
    locations = locations or {}

    def fail(message, section, key):
        raise ConfigError(message, locations.get((section, key)), 1 if (section, key) in locations else None,
                          key)

    fmt = run.get("format", "csv")
    if fmt not in FORMATS:
        fail(f"format must be one of {FORMATS}", "run", "format")
    seed = run.get("seed", DEFAULT_SEED)
    if not 0 <= seed < 2**64:
        fail("seed must be a 64-bit unsigned integer", "run", "seed")
    try:
        p = apply_overrides(REFERENCE_PARAMS, params)
        if {"subbin_time", "subbin_count", "detect_time"} & params.keys():
            p.check_subbins()
    except ParameterError as exc:
        key = next((k for k in _PARAM_KINDS if k in str(exc)), None)
        fail(str(exc), "params", key)
    del p
    try:
        s = SimSettings(**sim)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if s.n_shots < 1:
        fail("n_shots must be >= 1", "simulate", "n_shots")
    if not 0.0 <= s.prep_error <= 1.0:
        fail("prep_error must lie in [0, 1]", "simulate", "prep_error")
    if not -10.0 <= s.power_offset_db <= 10.0:
        fail("power_offset_db must lie in [-10, 10]", "simulate", "power_offset_db")
    return RunConfig(
        scenario=run.get("scenario"),
        seed=seed,
        out=run.get("out"),
        format=fmt,
        param_overrides=dict(params),
        simulate=s,
        grid=dict(grid),
        settings=dict(settings),
    )


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "inf" if v == math.inf else repr(v)
    return str(v)


def serialize_config(cfg: RunConfig) -> str:
    """Config text (SI units) that parses back to an equal :class:`RunConfig`."""
    out = ["[run]"]
    if cfg.scenario is not None:
        out.append(f"scenario = {cfg.scenario}")
    out.append(f"seed = {cfg.seed:#x}")
    if cfg.out is not None:
        out.append(f"out = {cfg.out}")
    out.append(f"format = {cfg.format}")
    out.append("")
    out.append("[params]")
    out.extend(f"{k} = {_fmt_value(v)}" for k, v in cfg.param_overrides.items())
    out.append("")
    out.append("[simulate]")
    out.extend(f"{f.name} = {_fmt_value(getattr(cfg.simulate, f.name))}" for f in fields(SimSettings))
    if cfg.grid:
        out.append("")
        out.append("[grid]")
        out.extend(f"{k} = {', '.join(_fmt_value(v) for v in vals)}" for k, vals in cfg.grid.items())
    if cfg.settings:
        out.append("")
        out.append("[settings]")
        out.extend(f"{k} = {_fmt_value(v)}" for k, v in cfg.settings.items())
    return "\n".join(out) + "\n"


# -- calibration files -------------------------------------------------------------------------

CALIBRATION_HEADER = ("k", "bright_count", "dark_count")


def _read_metadata(lines: list[str]) -> dict:
    meta = {}
    for line in lines:
        body = line.lstrip("#").strip()
        if "=" in body:
            key, value = (s.strip() for s in body.split("=", 1))
            meta[key] = _parse_free(value)
    return meta


def read_calibration_counts(path) -> tuple[np.ndarray, np.ndarray, dict]:
    """Raw ``(bright_counts, dark_counts, metadata)`` from a calibration CSV."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if ln.strip() and not ln.startswith("#")]
    if not body:
        raise CalibrationError(f"{path}: empty calibration file")
    reader = csv.reader(body)
    header = tuple(h.strip() for h in next(reader))
    if header != CALIBRATION_HEADER:
        raise CalibrationError(f"{path}: header must be {','.join(CALIBRATION_HEADER)}")
    ks, bright, dark = [], [], []
    for rowno, row in enumerate(reader, start=2):
        if len(row) != 3:
            raise CalibrationError(f"{path}: row {rowno} has {len(row)} fields, expected 3")
        try:
            k, b, d = (int(v) for v in row)
        except ValueError:
            raise CalibrationError(f"{path}: row {rowno} is not all integers") from None
        if b < 0 or d < 0:
            raise CalibrationError(f"{path}: negative count in row {rowno}")
        ks.append(k)
        bright.append(b)
        dark.append(d)
    if not ks:
        raise CalibrationError(f"{path}: no histogram rows")
    if ks != list(range(len(ks))):
        raise CalibrationError(f"{path}: k must run contiguously from 0")
    return np.array(bright), np.array(dark), _read_metadata(comments)


def load_calibration(path) -> CalibrationPair:
    """Normalised bright and dark calibration histograms from a CSV file."""
    bright, dark, _ = read_calibration_counts(path)
    if bright.size < 2:
        raise DegenerateCalibrationError(f"{path}: a single photon-count bin cannot separate the states")
    if bright.sum() == 0 or dark.sum() == 0:
        raise CalibrationError(f"{path}: a calibration histogram has no entries")
    pb = PhotonDistribution.from_counts(bright)
    pd = PhotonDistribution.from_counts(dark)
    log.info("calibration %s: bright mean %.6g, dark mean %.6g", path, pb.mean, pd.mean)
    if not pb.mean > pd.mean:
        raise CalibrationError(f"{path}: bright mean {pb.mean:g} does not exceed dark mean {pd.mean:g}")
    return CalibrationPair(pb, pd)


def write_calibration(path, bright_totals, dark_totals, metadata: Mapping | None = None) -> Path:
    """Histogram per-shot totals into a calibration CSV."""
    bright_totals = np.asarray(bright_totals, dtype=np.int64)
    dark_totals = np.asarray(dark_totals, dtype=np.int64)
    n = int(max(bright_totals.max(initial=0), dark_totals.max(initial=0))) + 1
    hb = np.bincount(bright_totals, minlength=n)
    hd = np.bincount(dark_totals, minlength=n)
    buf = io.StringIO()
    for key, value in (metadata or {}).items():
        buf.write(f"# {key} = {_fmt_value(value)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CALIBRATION_HEADER)
    w.writerows(zip(range(n), hb.tolist(), hd.tolist()))
    path = Path(path)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def read_histogram(path) -> PhotonDistribution:
    """Observed histogram from a CSV with header ``k,count``."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise CalibrationError(f"{path}: empty histogram file")
    reader = csv.reader(lines)
    if tuple(h.strip() for h in next(reader)) != ("k", "count"):
        raise CalibrationError(f"{path}: header must be k,count")
    rows = [(int(k), int(c)) for k, c in reader]
    if [k for k, _ in rows] != list(range(len(rows))):
        raise CalibrationError(f"{path}: k must run contiguously from 0")
    counts = [c for _, c in rows]
    if any(c < 0 for c in counts):
        raise CalibrationError(f"{path}: negative count")
    return PhotonDistribution.from_counts(counts)


# -- tables --------------------------------------------------------------------------------

def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        # repr is the shortest string that round-trips, same value as %.17g
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _json_value(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def render_table(rows: Sequence[Mapping], columns: Sequence[str], fmt: str = "csv") -> str:
    """Rows as CSV or a JSON array, columns in the given order."""
    for i, row in enumerate(rows):
        if set(row) != set(columns):
            raise ValueError(f"row {i} has columns {sorted(row)}, expected {list(columns)}")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        w.writerows([_cell(row[c]) for c in columns] for row in rows)
        return buf.getvalue()
    if fmt == "json":
        return json.dumps([{c: _json_value(row[c]) for c in columns} for row in rows], indent=2) + "\n"
    raise ValueError(f"format must be one of {FORMATS}")


def emit_table(rows: Sequence[Mapping], columns: Sequence[str], fmt: str, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(render_table(rows, columns, fmt))
    return path


def read_csv_table(path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return _json_value(obj)


def resolve_out_dir(cli_value: str | None, cfg: RunConfig | None = None, default: str | None = None) -> Path | None:
    """``--out`` beats the config, which beats ``PIDETECT_OUT``, which beats ``default``."""
    for candidate in (cli_value, cfg.out if cfg else None, os.environ.get("PIDETECT_OUT"), default):
        if candidate:
            return Path(candidate)
    return None


def with_overrides(cfg: RunConfig, **changes) -> RunConfig:
    return replace(cfg, **{k: v for k, v in changes.items() if v is not None})


def iter_param_pairs(pairs: Iterable[str]) -> dict:
    """``key=value`` strings (command-line overrides) into typed parameters."""
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        if key not in _PARAM_KINDS:
            raise ConfigError(f"unknown parameter {key!r}", key=key)
        try:
            out[key] = _parse_typed(value, _PARAM_KINDS[key])
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", key=key) from None
    return out
