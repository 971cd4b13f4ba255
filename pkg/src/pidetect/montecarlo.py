"""Seeded simulation of complete detection cycles.

A cycle is: state preparation, (optional) Rabi rotation, first detection,
spin-flip, second detection. Depumping of the dark state happens in
continuous time, so it can fall in the middle of a sub-bin.

Random numbers come from :mod:`pidetect.rng`, keyed by shot index and a
fixed draw slot (``DRAW_*`` below). The header slots are few and fixed; the
photon-count slots interleave the two detections so that the layout does
not depend on the number of sub-bins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from .detectors import (
    CalibrationPair,
    DetectionOutcome,
    ShotData,
    State,
    bayes_states,
    combine_pi_states,
    fit_amplitudes,
    threshold_states,
)
from .params import DetectionParams, MG25_CONSTANTS, PhysicalConstants
from .stats import PhotonDistribution, support_bound

DEFAULT_SEED = 0xCAFE

DRAW_STATE = 0
DRAW_PREP = 1
DRAW_FLIP = 2
DRAW_DEPUMP_1 = 3
DRAW_DEPUMP_2 = 4
DRAW_COUNTS = 16  # + 2*i for the first detection, + 2*i + 1 for the second

SCHEMES = ("threshold", "distfit", "bayesian", "pi", "pi_bayesian")
SHOT_SCHEMES = ("threshold", "bayesian", "pi", "pi_bayesian")
PI_SCHEMES = ("pi", "pi_bayesian")


@dataclass(frozen=True)
class SimConfig:
    params: DetectionParams
    n_shots: int = 10_000
    seed: int = DEFAULT_SEED
    power_offset_db: float = 0.0
    spinflip_enabled: bool = True
    prep_error: float = 0.0
    shot_offset: int = 0
    scaling: str = "saturation"
    constants: PhysicalConstants = MG25_CONSTANTS

    def __post_init__(self):
        if self.n_shots < 1:
            raise ValueError("n_shots must be >= 1")
        if not 0.0 <= self.prep_error <= 1.0:
            raise ValueError("prep_error must lie in [0, 1]")
        if self.shot_offset < 0:
            raise ValueError("shot_offset must be >= 0")

    @property
    def effective_params(self) -> DetectionParams:
        """Parameters after applying the detection-power offset."""
        return power_scaled_params(self.params, self.power_offset_db, self.constants, self.scaling)

    @property
    def spinflip_error(self) -> float:
        return self.effective_params.spinflip_error if self.spinflip_enabled else 0.0

    def replace(self, **changes) -> "SimConfig":
        return replace(self, **changes)


def power_scaled_params(
    params: DetectionParams,
    offset_db: float,
    constants: PhysicalConstants = MG25_CONSTANTS,
    law: str = "saturation",
) -> DetectionParams:
    """Rates and depumping time at a detection power offset (dB).

    ``law="saturation"`` scales the bright rate with ``s / (1 + s)``
    normalised to the calibration point; ``law="linear"`` scales it with
    ``s``. Background and depumping rate scale linearly with power in both.
    """
    if not -10.0 <= offset_db <= 10.0:
        raise ValueError("offset_db must lie in [-10, 10]")
    if offset_db == 0:
        return params
    s0 = constants.saturation
    s = s0 * 10.0 ** (offset_db / 10.0)
    if law == "saturation":
        gain = (s / (1.0 + s)) / (s0 / (1.0 + s0))
    elif law == "linear":
        gain = s / s0
    else:
        raise ValueError(f"unknown scaling law {law!r}")
    return replace(
        params,
        rate_bright=params.rate_bright * gain,
        rate_background=params.rate_background * s / s0,
        decay_time=params.decay_time * s0 / s,
    )


@dataclass
class ShotBatch:
    """Raw record of a block of simulated cycles (arrays over shots)."""

    shots: np.ndarray
    initial_bright: np.ndarray
    depump_time: np.ndarray
    counts: np.ndarray
    second_bright: np.ndarray | None = None
    depump_time_2: np.ndarray | None = None
    counts_2: np.ndarray | None = None

    @property
    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=-1)

    @property
    def totals_2(self) -> np.ndarray:
        return self.counts_2.sum(axis=-1)

    def __len__(self):
        return self.shots.size


@dataclass
class ShotRecord:
    true_state_initial: State
    depump_time: float
    series: ShotData
    outcomes: dict[str, DetectionOutcome] = field(default_factory=dict)
    second_series: ShotData | None = None


def _detect(seed, shots, bright, params: DetectionParams, depump_draw: int, second: bool):
    """One detection window; returns (depump time, sub-bin counts)."""
    n_bins = params.subbin_count
    ts = params.subbin_time
    if math.isinf(params.decay_time):
        t_dep = np.full(shots.size, np.inf)
    else:
        t_dep = rng.exponential(rng.uniform(seed, shots, depump_draw), params.decay_time)
    t_dep = np.where(bright, -np.inf, t_dep)

    starts = ts * np.arange(n_bins)
    bg = np.clip(t_dep[:, None] - starts[None, :], 0.0, ts)
    means = params.rate_background * bg + params.rate_bright * (ts - bg)
    draws = DRAW_COUNTS + 2 * np.arange(n_bins) + (1 if second else 0)
    u = rng.uniform(seed, shots[:, None], draws[None, :])
    counts = rng.poisson(u, means)
    t_dep = np.where(bright, np.inf, t_dep)
    return t_dep, counts


def spin_flip_mask(seed: int, shots, epsilon_rf: float) -> np.ndarray:
    """``True`` where the inversion succeeds (probability ``1 - epsilon_rf``)."""
    return rng.uniform(seed, shots, DRAW_FLIP) >= epsilon_rf


def simulate_batch(config: SimConfig, bright_prob=None, true_bright=None, shots=None, second: bool = True) -> ShotBatch:
    """Simulate cycles for ``shots`` (default: the config's shot range).

    The prepared state is either given per shot (``true_bright``) or drawn
    with probability ``bright_prob`` of being bright.
    """
    params = config.effective_params
    seed = config.seed
    if shots is None:
        shots = np.arange(config.shot_offset, config.shot_offset + config.n_shots, dtype=np.int64)
    shots = np.asarray(shots, dtype=np.int64)
    if true_bright is None:
        if bright_prob is None:
            raise ValueError("need bright_prob or true_bright")
        target = rng.uniform(seed, shots, DRAW_STATE) < np.broadcast_to(bright_prob, shots.shape)
    else:
        target = np.broadcast_to(np.asarray(true_bright, dtype=bool), shots.shape)
    if config.prep_error > 0:
        target = target ^ (rng.uniform(seed, shots, DRAW_PREP) < config.prep_error)
    initial = np.array(target, dtype=bool)

    t_dep, counts = _detect(seed, shots, initial, params, DRAW_DEPUMP_1, second=False)
    batch = ShotBatch(shots=shots, initial_bright=initial, depump_time=t_dep, counts=counts)
    if second:
        after_first = initial | (t_dep < params.detect_time)
        flipped = spin_flip_mask(seed, shots, config.spinflip_error)
        second_bright = after_first ^ flipped
        t_dep2, counts2 = _detect(seed, shots, second_bright, params, DRAW_DEPUMP_2, second=True)
        batch.second_bright = second_bright
        batch.depump_time_2 = t_dep2
        batch.counts_2 = counts2
    return batch


@dataclass
class BatchOutcomes:
    """Per-shot state codes (``State`` values) for every single-shot scheme."""

    states: dict[str, np.ndarray]
    posterior_error: dict[str, np.ndarray]


def classify_batch(batch: ShotBatch, params: DetectionParams, schemes=SHOT_SCHEMES) -> BatchOutcomes:
    states: dict[str, np.ndarray] = {}
    post: dict[str, np.ndarray] = {}
    sigma = params.threshold
    need_bayes = any(s in schemes for s in ("bayesian", "pi_bayesian"))
    if need_bayes:
        params.check_subbins()
    if "threshold" in schemes or "pi" in schemes:
        th1 = threshold_states(batch.totals, sigma)
        states["threshold"] = th1
        if "pi" in schemes:
            states["pi"] = combine_pi_states(th1, threshold_states(batch.totals_2, sigma))
    if need_bayes:
        b1, e1 = bayes_states(batch.counts, params)
        states["bayesian"] = b1
        post["bayesian"] = e1
        if "pi_bayesian" in schemes:
            b2, e2 = bayes_states(batch.counts_2, params)
            states["pi_bayesian"] = combine_pi_states(b1, b2)
            post["pi_bayesian"] = np.where(b1 != b2, e1 * e2, np.nan)
    return BatchOutcomes({k: v for k, v in states.items() if k in schemes}, post)


def calibration_pair(params: DetectionParams, support_max: int | None = None) -> CalibrationPair:
    """Analytic calibration histograms: bright Poisson and background-only Poisson."""
    n = support_bound(params.rate_bright * params.detect_time) if support_max is None else support_max
    return CalibrationPair(
        PhotonDistribution.poisson(params.rate_bright * params.detect_time, n),
        PhotonDistribution.poisson(params.mean_background, n),
    )


def simulate_calibration(config: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Sampled calibration counts: bright shots and background-only shots.

    Returns the per-shot totals of each; bright uses the config's shot range,
    background the following ``n_shots`` indices.
    """
    params = config.effective_params
    bright = simulate_batch(config, true_bright=True, second=False)
    bg_params = replace(params, decay_time=math.inf)
    bg_config = replace(config, params=bg_params, power_offset_db=0.0,
                        shot_offset=config.shot_offset + config.n_shots)
    dark = simulate_batch(bg_config, true_bright=False, second=False)
    return bright.totals, dark.totals


@dataclass(frozen=True)
class SchemeEstimate:
    scheme: str
    amplitude: float
    retained_fraction: float
    n_used: int


def estimate_amplitudes(
    batch: ShotBatch, params: DetectionParams, calib: CalibrationPair | None = None, schemes=SCHEMES
) -> dict[str, SchemeEstimate]:
    """Bright-population estimate of every scheme from one batch."""
    out: dict[str, SchemeEstimate] = {}
    n = len(batch)
    shot_schemes = tuple(s for s in schemes if s != "distfit")
    classified = classify_batch(batch, params, shot_schemes)
    for scheme, st in classified.states.items():
        accepted = st >= 0
        n_acc = int(accepted.sum())
        amp = float((st == State.BRIGHT).sum() / n_acc) if n_acc else math.nan
        out[scheme] = SchemeEstimate(scheme, amp, n_acc / n, n_acc)
    if "distfit" in schemes:
        if calib is None:
            raise ValueError("distribution fit needs a calibration pair")
        hist = PhotonDistribution.from_samples(batch.totals)
        out["distfit"] = SchemeEstimate("distfit", float(fit_amplitudes(hist.pmf, calib)[0]), 1.0, n)
    return {s: out[s] for s in schemes if s in out}


@dataclass(frozen=True)
class MeasuredErrors:
    scheme: str
    err_bright: float
    err_dark: float
    retained_bright: float
    retained_dark: float
    n_shots: int

    @property
    def avg_error(self) -> float:
        return 0.5 * (self.err_bright + self.err_dark)

    @property
    def retained_fraction(self) -> float:
        return 0.5 * (self.retained_bright + self.retained_dark)


def measure_errors(config: SimConfig, schemes=SHOT_SCHEMES) -> dict[str, MeasuredErrors]:
    """Error rates of each single-shot scheme from prepared bright and dark shots.

    Bright shots use indices ``[offset, offset + n)``, dark shots the next
    ``n``. Errors are joint probabilities (accepted and wrong) per prepared
    shot, matching the closed forms.
    """
    n = config.n_shots
    params = config.effective_params
    bright = simulate_batch(config, true_bright=True)
    dark = simulate_batch(replace(config, shot_offset=config.shot_offset + n), true_bright=False)
    cb = classify_batch(bright, params, schemes)
    cd = classify_batch(dark, params, schemes)
    out = {}
    for scheme in schemes:
        sb, sd = cb.states[scheme], cd.states[scheme]
        out[scheme] = MeasuredErrors(
            scheme=scheme,
            err_bright=float(np.count_nonzero(sb == State.DARK)) / n,
            err_dark=float(np.count_nonzero(sd == State.BRIGHT)) / n,
            retained_bright=float(np.count_nonzero(sb >= 0)) / n,
            retained_dark=float(np.count_nonzero(sd >= 0)) / n,
            n_shots=n,
        )
    return out


# -- single-shot API ------------------------------------------------------------------

def _single_config(config: SimConfig, stream: rng.ShotStream) -> tuple[SimConfig, np.ndarray]:
    return replace(config, seed=stream.seed), np.array([stream.shot], dtype=np.int64)


def sample_shot(true_state: State, config: SimConfig, stream: rng.ShotStream) -> ShotRecord:
    """Simulate one cycle; identical to row ``stream.shot`` of a batch run."""
    cfg, shots = _single_config(config, stream)
    params = cfg.effective_params
    batch = simulate_batch(cfg, true_bright=(State(true_state) == State.BRIGHT), shots=shots)
    need_bayes = abs(params.subbin_count * params.subbin_time - params.detect_time) <= 1e-9 * params.detect_time
    schemes = SHOT_SCHEMES if need_bayes else ("threshold", "pi")
    cls = classify_batch(batch, params, schemes)
    outcomes = {}
    for scheme, st in cls.states.items():
        err = cls.posterior_error.get(scheme)
        err = None if err is None or np.isnan(err[0]) else float(err[0])
        outcomes[scheme] = DetectionOutcome(State(int(st[0])), err)
    return ShotRecord(
        true_state_initial=State.BRIGHT if batch.initial_bright[0] else State.DARK,
        depump_time=float(batch.depump_time[0]),
        series=ShotData(tuple(batch.counts[0])),
        outcomes=outcomes,
        second_series=ShotData(tuple(batch.counts_2[0])),
    )


def apply_spin_flip(state: State, epsilon_rf: float, stream: rng.ShotStream) -> State:
    """Invert ``state`` with probability ``1 - epsilon_rf``."""
    if not 0.0 <= epsilon_rf <= 1.0:
        raise ValueError("epsilon_rf must lie in [0, 1]")
    state = State(state)
    if state == State.DISCARDED:
        raise ValueError("cannot flip a discarded state")
    if spin_flip_mask(stream.seed, stream.shot, epsilon_rf):
        return State.DARK if state == State.BRIGHT else State.BRIGHT
    return state


def run_pi_sequence(true_state: State, config: SimConfig, stream: rng.ShotStream, scheme: str = "pi") -> DetectionOutcome:
    """Detection, spin-flip of the post-detection state, detection, combination."""
    if scheme not in PI_SCHEMES:
        raise ValueError(f"scheme must be one of {PI_SCHEMES}")
    return sample_shot(true_state, config, stream).outcomes[scheme]


# -- scans ------------------------------------------------------------------------------

@dataclass(frozen=True)
class RabiPoint:
    time: float
    true_amplitude: float
    estimates: dict[str, SchemeEstimate]


def simulate_rabi_scan(
    rabi_freq: float,
    pulse_times,
    config: SimConfig,
    calib: CalibrationPair | None = None,
    schemes=SCHEMES,
    common_shots: bool = False,
) -> list[RabiPoint]:
    """Per-pulse-time amplitude estimates of every scheme.

    The ion starts bright, so the true bright population after a pulse of
    length ``t`` is ``cos^2(rabi_freq * t / 2)``. Classifiers use the
    calibration-point parameters (``config.params``), not the power-shifted
    ones. By default the i-th pulse time gets its own block of shot indices;
    ``common_shots=True`` reuses one block for all of them.
    """
    pulse_times = np.atleast_1d(np.asarray(pulse_times, dtype=float))
    if pulse_times.size == 0:
        raise ValueError("pulse_times must not be empty")
    if calib is None and "distfit" in schemes:
        calib = calibration_pair(config.params)
    points = []
    for i, t in enumerate(pulse_times):
        p = math.cos(rabi_freq * t / 2.0) ** 2
        cfg = config if common_shots else replace(config, shot_offset=config.shot_offset + i * config.n_shots)
        points.append(RabiPoint(float(t), p, simulate_amplitudes(cfg, p, calib, schemes)))
    return points


def simulate_amplitudes(
    config: SimConfig, amplitude: float, calib: CalibrationPair | None = None, schemes=SCHEMES
) -> dict[str, SchemeEstimate]:
    """Estimate a known bright population with every scheme.

    Shots are simulated at the config's (possibly power-shifted) parameters
    and analysed with the calibration-point ones.
    """
    if calib is None and "distfit" in schemes:
        calib = calibration_pair(config.params)
    batch = simulate_batch(config, bright_prob=amplitude, second=any(s in PI_SCHEMES for s in schemes))
    return estimate_amplitudes(batch, config.params, calib, schemes)


@dataclass(frozen=True)
class DistFitStudyPoint:
    n_shots: int
    repeats: int
    mean_amplitude: float
    std_amplitude: float


def distfit_error_study(
    n_grid,
    config: SimConfig,
    repeats: int = 1000,
    amplitude: float = 0.5,
    chunk_shots: int = 2_000_000,
) -> list[DistFitStudyPoint]:
    """Spread of the fitted amplitude over independent experiments of ``n`` shots.

    Repetition ``r`` uses shot indices ``[offset + r n, offset + (r+1) n)``.
    Only the integrated counts matter here, so each window is one bin.
    """
    if repeats < 2:
        raise ValueError("repeats must be >= 2")
    params = config.params
    one_bin = replace(params, subbin_time=params.detect_time, subbin_count=1)
    cfg = replace(config, params=one_bin)
    calib = calibration_pair(one_bin)
    support = calib.bright_hist.support_max
    out = []
    for n in n_grid:
        n = int(n)
        amps = np.empty(repeats)
        per_chunk = max(1, chunk_shots // n)
        for r0 in range(0, repeats, per_chunk):
            r1 = min(repeats, r0 + per_chunk)
            shots = np.arange(cfg.shot_offset + r0 * n, cfg.shot_offset + r1 * n, dtype=np.int64)
            batch = simulate_batch(cfg, bright_prob=amplitude, shots=shots, second=False)
            totals = np.minimum(batch.totals, support).reshape(r1 - r0, n)
            hists = np.zeros((r1 - r0, support + 1))
            np.add.at(hists, (np.repeat(np.arange(r1 - r0), n), totals.ravel()), 1.0)
            amps[r0:r1] = fit_amplitudes(hists / n, calib)
        out.append(DistFitStudyPoint(n, repeats, float(amps.mean()), float(amps.std(ddof=1))))
    return out
