"""Named reproduction scenarios and the fits they rely on.

Each scenario is a declarative record: a runner, its default grid (axes in
SI units) and a few scalar settings. Both can be overridden from a run
config without touching code. Runners return plain row dictionaries so the
output layer can serialise them without knowing the physics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping

import numpy as np
from scipy.optimize import curve_fit

from . import __version__, montecarlo as mc, theory
from .params import HIGH_RATE_PARAMS, REFERENCE_PARAMS, DetectionParams
from .stats import mean_dark


@dataclass(frozen=True)
class TableSpec:
    name: str
    columns: tuple[str, ...]


@dataclass
class ScenarioResult:
    name: str
    tables: dict[str, list[dict]]
    summary: dict
    provenance: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    runner: Callable[..., ScenarioResult]
    params: DetectionParams
    grid: Mapping[str, tuple]
    settings: Mapping[str, object] = MappingProxyType({})
    schemes: tuple[str, ...] = ()
    outputs: tuple[TableSpec, ...] = ()

    def __post_init__(self):
        for axis, values in self.grid.items():
            if len(values) == 0:
                raise ValueError(f"scenario {self.name}: axis {axis!r} is empty")


@dataclass(frozen=True)
class ContrastFit:
    contrast: float
    rabi_freq: float
    offset: float
    residual: float

    @property
    def converged(self) -> bool:
        return math.isfinite(self.residual)

    @property
    def flagged(self) -> bool:
        """Non-converged fits and overshooting contrasts."""
        return not self.converged or self.contrast > 1.0


# -- fits -------------------------------------------------------------------------------

def _rabi_model(t, contrast, omega, offset):
    return offset + 0.5 * contrast * np.cos(omega * t)


def _guess_omega(times: np.ndarray, y: np.ndarray) -> float:
    # peak of a dense periodogram over frequencies the sampling can resolve
    span = times.max() - times.min()
    dt = np.min(np.diff(np.sort(times)))
    omegas = np.linspace(0.5 * 2 * np.pi / span, np.pi / dt, 4000)
    yc = y - y.mean()
    power = np.abs(np.exp(-1j * np.outer(omegas, times)) @ yc)
    return float(omegas[np.argmax(power)])


def fit_rabi_curve(times, amplitudes, rabi_freq_guess: float | None = None) -> ContrastFit:
    """Least-squares fit of ``offset + (C/2) cos(omega t)``.

    A failed fit is returned with ``residual = inf`` rather than raised.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(amplitudes, dtype=float)
    if t.shape != y.shape or t.size < 8:
        raise ValueError("need at least 8 (time, amplitude) pairs")
    omega0 = rabi_freq_guess if rabi_freq_guess is not None else _guess_omega(t, y)
    if omega0 * (t.max() - t.min()) < 2 * np.pi * (1 - 1e-9):
        raise ValueError("data must span at least one period")
    p0 = (y.max() - y.min(), omega0, y.mean())
    if np.max(np.abs(y - y[0])) == 0:
        return ContrastFit(0.0, omega0, float(y[0]), 0.0)
    try:
        popt, _ = curve_fit(_rabi_model, t, y, p0=p0, xtol=1e-14, ftol=1e-14, gtol=1e-14, maxfev=20000)
    except (RuntimeError, ValueError):
        return ContrastFit(math.nan, omega0, math.nan, math.inf)
    res = y - _rabi_model(t, *popt)
    rms = float(np.sqrt(np.mean(res**2)))
    if not np.all(np.isfinite(popt)):
        return ContrastFit(math.nan, omega0, math.nan, math.inf)
    return ContrastFit(float(popt[0]), float(popt[1]), float(popt[2]), rms)


def _dark_curve(tau, rate_bright, rate_background, decay_time):
    return rate_bright * tau - (rate_bright - rate_background) * decay_time * -np.expm1(-tau / decay_time)


@dataclass(frozen=True)
class DepumpingFit:
    rate_bright: float
    rate_background: float
    decay_time: float
    bright_slope: float
    bright_intercept: float


def fit_depumping_curve(taus, dark_means, bright_means) -> DepumpingFit:
    """Fit dark means to the depumping curve and bright means to a line."""
    taus = np.asarray(taus, dtype=float)
    dark_means = np.asarray(dark_means, dtype=float)
    slope, intercept = np.polyfit(taus, bright_means, 1)
    p0 = (slope, max(dark_means[0] / taus[0], 1.0), taus[len(taus) // 2])
    popt, _ = curve_fit(_dark_curve, taus, dark_means, p0=p0, maxfev=20000)
    return DepumpingFit(float(popt[0]), float(popt[1]), float(popt[2]), float(slope), float(intercept))


# -- runners ------------------------------------------------------------------------------

def _provenance(name: str, seed: int | None, params: DetectionParams, settings: Mapping) -> dict:
    import scipy

    return {
        "scenario": name,
        "seed": seed,
        "params": params.to_dict(),
        "settings": dict(settings),
        "versions": {"pidetect": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
    }


def _us(values) -> np.ndarray:
    # division keeps round microsecond values on their nearest double
    return np.asarray(values, dtype=float) / 1e6


def run_error_maps(params: DetectionParams = REFERENCE_PARAMS, detect_times=None, thresholds=range(16)) -> ScenarioResult:
    """Closed-form threshold and pi errors over (detection time, threshold)."""
    detect_times = _us(np.arange(1, 101)) if detect_times is None else detect_times
    rows = []
    for tau in detect_times:
        for sigma in thresholds:
            p = params.with_detect_time(float(tau)).replace(threshold=int(sigma))
            th = theory.threshold_avg_error(p)
            pi = theory.pi_avg_error(p)
            rows.append({
                "detect_time": float(tau),
                "threshold": int(sigma),
                "threshold_error": th.avg_error,
                "pi_error": pi.avg_error,
                "retained_fraction": pi.retained_fraction,
            })
    return ScenarioResult("error_maps", {"grid": rows}, {})


def run_bias_vs_decay(params: DetectionParams = REFERENCE_PARAMS, decay_times=None, marker: float = 60e-6) -> ScenarioResult:
    decay_times = _us(np.geomspace(1, 1000, 61)) if decay_times is None else decay_times
    curve = []
    for T in decay_times:
        p = params.replace(decay_time=float(T))
        curve.append({"decay_time": float(T), "bias_threshold": theory.bias_threshold(p),
                      "bias_pi": theory.bias_pi(p)})
    pm = params.replace(decay_time=marker)
    mark = {"decay_time": marker, "bias_threshold": theory.bias_threshold(pm), "bias_pi": theory.bias_pi(pm)}
    summary = {"bias_threshold_at_marker": mark["bias_threshold"], "bias_pi_at_marker": mark["bias_pi"]}
    return ScenarioResult("bias_vs_decay", {"curve": curve, "markers": [mark]}, summary)


def _band_row(tau, scheme, method, err, retained, n_band):
    half = theory.projection_noise_halfwidth(0.5, n_band * retained)
    return {
        "detect_time": float(tau),
        "scheme": scheme,
        "method": method,
        "avg_error": err,
        "retained_fraction": retained,
        "conf_halfwidth": half,
        "lower": err - half,
        "upper": err + half,
    }


def run_error_vs_time(
    params: DetectionParams = REFERENCE_PARAMS,
    detect_times=None,
    n_events: int = 2000,
    n_band: int = 1000,
    seed: int = mc.DEFAULT_SEED,
) -> ScenarioResult:
    """Error against detection time: closed forms plus simulated Bayesian schemes.

    The simulated points use ``n_events`` cycles, half prepared bright and
    half dark. The simulated threshold error from the same cycles is also
    reported so the Bayesian comparison is paired.
    """
    detect_times = _us(np.arange(2, 62, 2)) if detect_times is None else detect_times
    rows = []
    for tau in detect_times:
        p = params.with_detect_time(float(tau))
        th = theory.threshold_avg_error(p)
        pi = theory.pi_avg_error(p)
        rows.append(_band_row(tau, "threshold", "closed_form", th.avg_error, 1.0, n_band))
        rows.append(_band_row(tau, "pi", "closed_form", pi.avg_error, pi.retained_fraction, n_band))
        cfg = mc.SimConfig(p, n_shots=n_events // 2, seed=seed)
        measured = mc.measure_errors(cfg, mc.SHOT_SCHEMES)
        for scheme in ("threshold", "bayesian", "pi_bayesian"):
            m = measured[scheme]
            rows.append(_band_row(tau, scheme, "monte_carlo", m.avg_error, m.retained_fraction, n_band))
    return ScenarioResult("error_vs_time", {"curves": rows}, {})


def _slope(x, y) -> float:
    if len(np.unique(x)) < 2:
        return math.nan
    return float(np.polyfit(x, y, 1)[0])


def run_power_scan(
    params: DetectionParams = REFERENCE_PARAMS,
    offsets_db=None,
    n_shots: int = 750,
    amplitude: float = 0.5,
    fit_window_db: float = 1.0,
    seed: int = mc.DEFAULT_SEED,
    scaling: str = "saturation",
) -> ScenarioResult:
    """Amplitude of a fixed superposition against detection-power offset.

    Every offset reuses the same shot indices, so the scan isolates the
    systematic power dependence from shot noise.
    """
    offsets = np.arange(-10, 11) * 0.5 if offsets_db is None else np.asarray(offsets_db, dtype=float)
    calib = mc.calibration_pair(params)
    rows = []
    for off in offsets:
        cfg = mc.SimConfig(params, n_shots=n_shots, seed=seed, power_offset_db=float(off), scaling=scaling)
        for scheme, est in mc.simulate_amplitudes(cfg, amplitude, calib).items():
            half = theory.projection_noise_halfwidth(amplitude, max(est.n_used, 1))
            rows.append({"offset_db": float(off), "scheme": scheme, "amplitude": est.amplitude,
                         "retained_fraction": est.retained_fraction, "conf_halfwidth": half})
    summary = {}
    window = np.abs(offsets) <= fit_window_db + 1e-12
    for scheme in mc.SCHEMES:
        pts = [(r["offset_db"], r["amplitude"]) for r in rows if r["scheme"] == scheme]
        x, y = np.array(pts).T
        summary[f"slope_{scheme}"] = _slope(x[window], y[window])
    return ScenarioResult("power_scan", {"amplitudes": rows}, summary)


def run_rabi_contrast_study(
    params: DetectionParams = HIGH_RATE_PARAMS,
    thresholds=range(6),
    n_points: int = 1001,
    n_shots: int = 750,
    rabi_period: float = 100e-6,
    n_periods: float = 2.0,
    seed: int = mc.DEFAULT_SEED,
) -> ScenarioResult:
    """Fitted Rabi contrast of every scheme for each threshold.

    One set of simulated cycles is analysed at every threshold, so the
    thresholds differ only in the classification.
    """
    omega = 2 * np.pi / rabi_period
    times = np.linspace(0.0, n_periods * rabi_period, n_points)
    calib = mc.calibration_pair(params)
    batches = []
    for i, t in enumerate(times):
        cfg = mc.SimConfig(params, n_shots=n_shots, seed=seed, shot_offset=i * n_shots)
        batches.append(mc.simulate_batch(cfg, bright_prob=math.cos(omega * t / 2) ** 2))
    fits, amps = [], []
    free = {}  # threshold-independent schemes are evaluated once
    for sigma in thresholds:
        p = params.replace(threshold=int(sigma))
        per_scheme: dict[str, list[tuple[float, float]]] = {s: [] for s in mc.SCHEMES}
        for t, batch in zip(times, batches):
            schemes = mc.SCHEMES if not free else ("threshold", "pi")
            for s, est in mc.estimate_amplitudes(batch, p, calib, schemes).items():
                per_scheme[s].append((est.amplitude, est.retained_fraction))
        for s in ("distfit", "bayesian", "pi_bayesian"):
            if free.get(s) is None:
                free[s] = per_scheme[s]
            per_scheme[s] = free[s]
        stat = theory.pi_retained_fraction(p)
        for s, vals in per_scheme.items():
            a = np.array([v[0] for v in vals])
            ok = np.isfinite(a)
            fit = fit_rabi_curve(times[ok], a[ok], rabi_freq_guess=omega)
            fits.append({"threshold": int(sigma), "scheme": s, "contrast": fit.contrast,
                         "rabi_freq": fit.rabi_freq, "offset": fit.offset, "residual": fit.residual,
                         "flagged": fit.flagged, "pi_stat": stat,
                         "mean_retained": float(np.mean([v[1] for v in vals]))})
            amps.extend({"threshold": int(sigma), "scheme": s, "time": float(t),
                         "amplitude": float(v[0]), "retained_fraction": float(v[1])}
                        for t, v in zip(times, vals))
    return ScenarioResult("rabi_contrast", {"contrast": fits, "amplitudes": amps}, {})


def run_depumping_curve(
    params: DetectionParams = HIGH_RATE_PARAMS,
    detect_times=None,
    n_shots: int = 10_000,
    seed: int = mc.DEFAULT_SEED,
) -> ScenarioResult:
    """Mean dark and bright counts against window length, with the fitted curves."""
    taus = _us([1, 2, 5] + list(range(10, 301, 10))) if detect_times is None \
        else np.asarray(detect_times, dtype=float)
    rows = []
    for i, tau in enumerate(taus):
        p = params.replace(detect_time=float(tau), subbin_time=float(tau), subbin_count=1)
        cfg = mc.SimConfig(p, n_shots=n_shots, seed=seed, shot_offset=2 * i * n_shots)
        dark = mc.simulate_batch(cfg, true_bright=False, second=False).totals
        bright = mc.simulate_batch(cfg.replace(shot_offset=(2 * i + 1) * n_shots), true_bright=True,
                                   second=False).totals
        rows.append({"detect_time": float(tau), "dark_mean": float(dark.mean()),
                     "dark_sem": float(dark.std(ddof=1) / math.sqrt(n_shots)),
                     "bright_mean": float(bright.mean()), "dark_model": mean_dark(p)})
    fit = fit_depumping_curve(taus, [r["dark_mean"] for r in rows], [r["bright_mean"] for r in rows])
    summary = {
        "fitted_decay_time": fit.decay_time,
        "fitted_rate_bright": fit.rate_bright,
        "fitted_rate_background": fit.rate_background,
        "bright_slope": fit.bright_slope,
        "bright_intercept": fit.bright_intercept,
        "decay_time_rel_error": fit.decay_time / params.decay_time - 1.0,
        "rate_bright_rel_error": fit.rate_bright / params.rate_bright - 1.0,
    }
    return ScenarioResult("depumping_curve", {"means": rows}, summary)


def run_distfit_study(
    params: DetectionParams = REFERENCE_PARAMS,
    n_experiments=(100, 300, 1000, 3000, 10000),
    repeats: int = 2000,
    seed: int = mc.DEFAULT_SEED,
) -> ScenarioResult:
    points = mc.distfit_error_study(n_experiments, mc.SimConfig(params, seed=seed), repeats=repeats)
    rows = [{"n_experiments": pt.n_shots, "repeats": pt.repeats, "mean_amplitude": pt.mean_amplitude,
             "std_amplitude": pt.std_amplitude} for pt in points]
    n = np.array([r["n_experiments"] for r in rows], dtype=float)
    s = np.array([r["std_amplitude"] for r in rows])
    return ScenarioResult("distfit_study", {"std": rows}, {"loglog_slope": _slope(np.log(n), np.log(s))})


# -- registry ------------------------------------------------------------------------------

def _frozen(d: dict) -> Mapping:
    return MappingProxyType(dict(d))


def _us_grid(values) -> tuple[float, ...]:
    return tuple(float(v) for v in _us(values))


def _scenario_list() -> list[Scenario]:
    return [
        Scenario(
            "error_maps", "closed-form threshold and pi error over detection time and threshold",
            lambda params, grid, settings, seed: run_error_maps(params, grid["detect_time"], grid["threshold"]),
            REFERENCE_PARAMS,
            _frozen({"detect_time": _us_grid(range(1, 101)), "threshold": tuple(range(16))}),
            schemes=("threshold", "pi"),
            outputs=(TableSpec("grid", ("detect_time", "threshold", "threshold_error", "pi_error",
                                        "retained_fraction")),),
        ),
        Scenario(
            "bias_vs_decay", "closed-form bias of threshold and pi detection against decay time",
            lambda params, grid, settings, seed: run_bias_vs_decay(params, grid["decay_time"],
                                                                   settings["marker_decay_time"]),
            REFERENCE_PARAMS,
            _frozen({"decay_time": _us_grid(np.geomspace(1, 1000, 61))}),
            _frozen({"marker_decay_time": 60e-6}),
            schemes=("threshold", "pi"),
            outputs=(TableSpec("curve", ("decay_time", "bias_threshold", "bias_pi")),
                     TableSpec("markers", ("decay_time", "bias_threshold", "bias_pi"))),
        ),
        Scenario(
            "error_vs_time", "error against detection time with projection-noise bands",
            lambda params, grid, settings, seed: run_error_vs_time(
                params, grid["detect_time"], settings["n_events"], settings["n_band"], seed),
            REFERENCE_PARAMS,
            _frozen({"detect_time": _us_grid(range(2, 62, 2))}),
            _frozen({"n_events": 2000, "n_band": 1000}),
            schemes=("threshold", "pi", "bayesian", "pi_bayesian"),
            outputs=(TableSpec("curves", ("detect_time", "scheme", "method", "avg_error", "retained_fraction",
                                          "conf_halfwidth", "lower", "upper")),),
        ),
        Scenario(
            "power_scan", "estimated amplitude of an equal superposition against detection power",
            lambda params, grid, settings, seed: run_power_scan(
                params, grid["offset_db"], settings["n_shots"], settings["amplitude"],
                settings["fit_window_db"], seed, settings["scaling"]),
            REFERENCE_PARAMS,
            _frozen({"offset_db": tuple(float(v) for v in np.arange(-10, 11) * 0.5)}),
            _frozen({"n_shots": 750, "amplitude": 0.5, "fit_window_db": 1.0, "scaling": "saturation"}),
            schemes=mc.SCHEMES,
            outputs=(TableSpec("amplitudes", ("offset_db", "scheme", "amplitude", "retained_fraction",
                                              "conf_halfwidth")),),
        ),
        Scenario(
            "rabi_contrast", "fitted Rabi contrast of every scheme against threshold",
            lambda params, grid, settings, seed: run_rabi_contrast_study(
                params, grid["threshold"], settings["n_points"], settings["n_shots"],
                settings["rabi_period"], settings["n_periods"], seed),
            HIGH_RATE_PARAMS,
            _frozen({"threshold": tuple(range(6))}),
            _frozen({"n_points": 1001, "n_shots": 750, "rabi_period": 100e-6, "n_periods": 2.0}),
            schemes=mc.SCHEMES,
            outputs=(TableSpec("contrast", ("threshold", "scheme", "contrast", "rabi_freq", "offset", "residual",
                                            "flagged", "pi_stat", "mean_retained")),
                     TableSpec("amplitudes", ("threshold", "scheme", "time", "amplitude", "retained_fraction"))),
        ),
        Scenario(
            "depumping_curve", "mean dark and bright counts against detection time, fitted",
            lambda params, grid, settings, seed: run_depumping_curve(
                params, grid["detect_time"], settings["n_shots"], seed),
            HIGH_RATE_PARAMS,
            _frozen({"detect_time": _us_grid([1, 2, 5] + list(range(10, 301, 10)))}),
            _frozen({"n_shots": 10_000}),
            outputs=(TableSpec("means", ("detect_time", "dark_mean", "dark_sem", "bright_mean", "dark_model")),),
        ),
        Scenario(
            "distfit_study", "spread of the distribution-fit amplitude against number of experiments",
            lambda params, grid, settings, seed: run_distfit_study(
                params, grid["n_experiments"], settings["repeats"], seed),
            REFERENCE_PARAMS,
            _frozen({"n_experiments": (100, 300, 1000, 3000, 10000)}),
            _frozen({"repeats": 2000}),
            schemes=("distfit",),
            outputs=(TableSpec("std", ("n_experiments", "repeats", "mean_amplitude", "std_amplitude")),),
        ),
    ]


REGISTRY: Mapping[str, Scenario] = MappingProxyType({s.name: s for s in _scenario_list()})


def list_scenarios() -> list[str]:
    return list(REGISTRY)


def get_scenario(name: str) -> Scenario:
    try:
        return REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; known: {', '.join(REGISTRY)}") from None


def run_scenario(
    name: str,
    seed: int = mc.DEFAULT_SEED,
    params: DetectionParams | None = None,
    grid: Mapping[str, tuple] | None = None,
    settings: Mapping[str, object] | None = None,
) -> ScenarioResult:
    """Run a registered scenario with optional overrides of its defaults."""
    sc = get_scenario(name)
    g = dict(sc.grid)
    for axis, values in (grid or {}).items():
        if axis not in g:
            raise KeyError(f"scenario {name!r} has no grid axis {axis!r}")
        if len(values) == 0:
            raise ValueError(f"grid axis {axis!r} is empty")
        g[axis] = tuple(values)
    st = dict(sc.settings)
    for key, value in (settings or {}).items():
        if key not in st:
            raise KeyError(f"scenario {name!r} has no setting {key!r}")
        st[key] = value
    p = sc.params if params is None else params
    result = sc.runner(p, g, st, seed)
    result.provenance = _provenance(name, seed, p, st)
    return result
