"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 runtime or numerical
error, 4 I/O error.
"""

from __future__ import annotations

import logging
import math
import sys
from pathlib import Path

import click

from . import experiments, montecarlo as mc, theory
from .detectors import fit_distribution
from .io import (
    FORMATS,
    apply_overrides,
    CalibrationError,
    ConfigError,
    RunConfig,
    emit_table,
    iter_param_pairs,
    load_calibration,
    load_config,
    read_histogram,
    render_table,
    resolve_out_dir,
    write_json,
)
from .params import DetectionParams, ParameterError

EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_IO = 4

log = logging.getLogger("pidetect")


def _fail(message: str, code: int):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn):
    """Map exceptions to the documented exit codes."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, KeyError) as exc:
            _fail(str(exc).strip("'\""), EXIT_CONFIG)
        except OSError as exc:
            _fail(str(exc), EXIT_IO)
        except (ParameterError, CalibrationError, ValueError, ArithmeticError) as exc:
            _fail(str(exc), EXIT_RUNTIME)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        return load_config(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {exc.filename}") from None


def _params(cfg: RunConfig, pairs) -> DetectionParams:
    try:
        return apply_overrides(cfg.params, iter_param_pairs(pairs))
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None


def _emit(rows, columns, fmt, out_dir: Path | None, name: str):
    if out_dir is None:
        click.echo(render_table(rows, columns, fmt), nl=False)
        return
    path = emit_table(rows, columns, fmt, out_dir / f"{name}.{fmt}")
    click.echo(str(path))


def _print_scenarios(ctx, _param, value):
    if not value or ctx.resilient_parsing:
        return
    for name in experiments.list_scenarios():
        click.echo(name)
    ctx.exit(0)


common_seed = click.option("--seed", type=str, default=None, help="64-bit seed (decimal or 0x hex); default 0xCAFE.")
common_out = click.option("--out", type=click.Path(file_okay=False), default=None,
                          help="Output directory (default: $PIDETECT_OUT).")
common_format = click.option("--format", "fmt", type=click.Choice(FORMATS), default=None, help="Table format.")
common_config = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                             help="Run configuration file.")


def _seed(value: str | None, cfg: RunConfig) -> int:
    if value is None:
        return cfg.seed
    try:
        seed = int(value, 0)
    except ValueError:
        raise ConfigError(f"seed must be an integer, got {value!r}", key="seed") from None
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer", key="seed")
    return seed


@click.group()
@click.option("--list-scenarios", is_flag=True, expose_value=False, is_eager=True, callback=_print_scenarios,
              help="List registered scenarios and exit.")
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool):
    """State-detection error models, simulations and reproduction scenarios."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(name)s: %(message)s")


@main.command("list-scenarios")
def list_scenarios_cmd():
    """List registered scenarios."""
    for name in experiments.list_scenarios():
        sc = experiments.get_scenario(name)
        click.echo(f"{name}\t{sc.description}")


@main.command("run")
@click.argument("scenario", required=False)
@common_seed
@common_out
@common_format
@common_config
@_guarded
def run_cmd(scenario, seed, out, fmt, config_path):
    """Run SCENARIO and write its tables, summary and provenance."""
    cfg = _config(config_path)
    name = scenario or cfg.scenario
    if name is None:
        raise ConfigError("no scenario given (argument or [run] scenario)")
    sc = experiments.get_scenario(name)
    fmt = fmt or cfg.format
    out_dir = resolve_out_dir(out, cfg, default="results") / name
    params = cfg.params_on(sc.params)
    log.info("running %s", name)
    result = experiments.run_scenario(name, _seed(seed, cfg), params, cfg.grid, cfg.settings)
    specs = {t.name: t.columns for t in sc.outputs}
    for table, rows in result.tables.items():
        emit_table(rows, specs[table], fmt, out_dir / f"{table}.{fmt}")
    write_json(result.summary, out_dir / "summary.json")
    write_json(result.provenance, out_dir / "provenance.json")
    click.echo(str(out_dir))


PREDICT_COLUMNS = ("scheme", "err_bright", "err_dark", "avg_error", "bias", "retained_fraction", "conf_halfwidth")


@main.command("predict")
@click.option("--param", "-p", "pairs", multiple=True, help="Parameter override key=value (units allowed).")
@click.option("--n-shots", type=int, default=1000, show_default=True, help="Experiments for the noise band.")
@common_out
@common_format
@common_config
@_guarded
def predict_cmd(pairs, n_shots, out, fmt, config_path):
    """Closed-form errors, bias and retained fraction at one parameter point."""
    cfg = _config(config_path)
    params = _params(cfg, pairs)
    rows = [theory.threshold_avg_error(params, n_shots).as_row(), theory.pi_avg_error(params, n_shots).as_row()]
    _emit(rows, PREDICT_COLUMNS, fmt or cfg.format, resolve_out_dir(out, cfg), "predict")


SIM_COLUMNS = ("scheme", "err_bright", "err_dark", "avg_error", "retained_fraction", "n_shots")


@main.command("simulate")
@click.option("--param", "-p", "pairs", multiple=True, help="Parameter override key=value (units allowed).")
@click.option("--shots", type=int, default=None, help="Shots per prepared state.")
@click.option("--power-offset", type=float, default=None, help="Detection power offset in dB.")
@click.option("--no-spinflip", is_flag=True, help="Model an ideal spin-flip.")
@common_seed
@common_out
@common_format
@common_config
@_guarded
def simulate_cmd(pairs, shots, power_offset, no_spinflip, seed, out, fmt, config_path):
    """Monte-Carlo error rates of every single-shot scheme."""
    cfg = _config(config_path)
    sim = cfg.simulate
    params = _params(cfg, pairs)
    config = mc.SimConfig(
        params,
        n_shots=shots if shots is not None else sim.n_shots,
        seed=_seed(seed, cfg),
        power_offset_db=power_offset if power_offset is not None else sim.power_offset_db,
        spinflip_enabled=sim.spinflip_enabled and not no_spinflip,
        prep_error=sim.prep_error,
    )
    measured = mc.measure_errors(config)
    rows = [{"scheme": s, "err_bright": m.err_bright, "err_dark": m.err_dark, "avg_error": m.avg_error,
             "retained_fraction": m.retained_fraction, "n_shots": m.n_shots} for s, m in measured.items()]
    _emit(rows, SIM_COLUMNS, fmt or cfg.format, resolve_out_dir(out, cfg), "simulate")


@main.command("fit-calibration")
@click.argument("calibration", type=click.Path(dir_okay=False))
@click.option("--observed", type=click.Path(dir_okay=False), default=None,
              help="Histogram CSV (k,count) to decompose into the calibration pair.")
@common_out
@common_format
@_guarded
def fit_calibration_cmd(calibration, observed, out, fmt):
    """Load a calibration pair and optionally fit an observed histogram."""
    calib = load_calibration(calibration)
    row = {"bright_mean": calib.bright_hist.mean, "dark_mean": calib.dark_hist.mean,
           "amplitude": math.nan}
    if observed is not None:
        row["amplitude"] = fit_distribution(read_histogram(observed), calib)
    _emit([row], ("bright_mean", "dark_mean", "amplitude"), fmt or "csv", resolve_out_dir(out), "calibration")


if __name__ == "__main__":
    main()
