"""Per-shot state classifiers and the ensemble distribution fit.

Every classifier has a scalar form working on :class:`ShotData` and a
vectorised form working on integer arrays whose last axis is the sub-bin
index. The simulator uses the array forms; both share the same arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable

import numpy as np
from scipy.special import expit, logsumexp

from .params import DetectionParams
from .stats import PhotonDistribution, log_poisson_pmf


class State(IntEnum):
    DISCARDED = -1
    DARK = 0
    BRIGHT = 1


class DegenerateCalibrationError(ValueError):
    """The calibration histograms cannot separate the two states."""


class ContractError(ValueError):
    """A classifier was called with inputs outside its contract."""


@dataclass(frozen=True)
class ShotData:
    subbin_counts: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in np.atleast_1d(self.subbin_counts))
        if not counts:
            raise ValueError("a shot needs at least one sub-bin")
        if any(c < 0 for c in counts):
            raise ValueError("photon counts must be non-negative")
        object.__setattr__(self, "subbin_counts", counts)

    @property
    def total(self) -> int:
        return sum(self.subbin_counts)

    def __len__(self):
        return len(self.subbin_counts)


@dataclass(frozen=True)
class DetectionOutcome:
    state: State
    posterior_error: float | None = None
    converged: bool = True

    def __post_init__(self):
        if self.posterior_error is not None and not 0.0 <= self.posterior_error <= 0.5:
            # combined pi-Bayesian errors are products of two values <= 0.5
            raise ValueError("posterior_error must lie in [0, 0.5]")


@dataclass(frozen=True, eq=False)
class CalibrationPair:
    bright_hist: PhotonDistribution
    dark_hist: PhotonDistribution

    def __post_init__(self):
        for name in ("bright_hist", "dark_hist"):
            if not getattr(self, name).is_normalized():
                raise ValueError(f"{name} is not normalized")
        if not self.bright_hist.mean > self.dark_hist.mean:
            raise DegenerateCalibrationError("bright calibration mean must exceed the dark one")


def _as_shot(shot) -> ShotData:
    return shot if isinstance(shot, ShotData) else ShotData(tuple(np.atleast_1d(shot)))


# -- threshold ---------------------------------------------------------------

def threshold_states(totals, sigma: int) -> np.ndarray:
    """``BRIGHT`` where the count exceeds ``sigma``, else ``DARK``."""
    return (np.asarray(totals) > sigma).astype(np.int8)


def classify_threshold(shot, sigma: int) -> DetectionOutcome:
    shot = _as_shot(shot)
    return DetectionOutcome(State.BRIGHT if shot.total > sigma else State.DARK)


# -- Bayesian ----------------------------------------------------------------

def _subbin_means(params: DetectionParams) -> tuple[float, float]:
    return params.rate_bright * params.subbin_time, params.rate_background * params.subbin_time


def _log_lik_bright(series: np.ndarray, params: DetectionParams) -> np.ndarray:
    mean_b, _ = _subbin_means(params)
    return log_poisson_pmf(series, mean_b).sum(axis=-1)


def _log_lik_dark(series: np.ndarray, params: DetectionParams) -> np.ndarray:
    # depumping only at sub-bin edges: background before bin j, bright from j on
    mean_b, mean_inf = _subbin_means(params)
    n = series.shape[-1]
    lb = log_poisson_pmf(series, mean_b)
    lbg = log_poisson_pmf(series, mean_inf)
    zeros = np.zeros(series.shape[:-1] + (1,))
    head_bg = np.concatenate([zeros, np.cumsum(lbg, axis=-1)], axis=-1)
    tail_b = np.concatenate([np.cumsum(lb[..., ::-1], axis=-1)[..., ::-1], zeros], axis=-1)

    ratio = params.subbin_time / params.decay_time
    log_q = -ratio
    log_1mq = math.log(-math.expm1(-ratio)) if ratio > 0 else -math.inf
    j0 = np.arange(n)
    with np.errstate(invalid="ignore"):
        log_w = np.where(j0 == 0, log_1mq, log_1mq + j0 * log_q)
    depumped = log_w + head_bg[..., :n] + tail_b[..., :n]
    never = n * log_q + head_bg[..., n:]
    return logsumexp(np.concatenate([depumped, never], axis=-1), axis=-1)


def _check_series(series, params: DetectionParams) -> np.ndarray:
    arr = np.asarray(series)
    if arr.shape[-1] != params.subbin_count:
        raise ContractError(
            f"series has {arr.shape[-1]} sub-bins, params expect {params.subbin_count}"
        )
    return arr


def likelihood_bright(series, params: DetectionParams):
    """Log-likelihood of a sub-bin series under the bright hypothesis."""
    params.check_subbins()
    out = _log_lik_bright(_check_series(series, params), params)
    return float(out) if np.ndim(out) == 0 else out


def likelihood_dark(series, params: DetectionParams):
    """Log-likelihood under the dark hypothesis with bin-edge depumping."""
    params.check_subbins()
    out = _log_lik_dark(_check_series(series, params), params)
    return float(out) if np.ndim(out) == 0 else out


def bayes_decide(log_lb, log_ld) -> tuple[np.ndarray, np.ndarray]:
    """Hard decision and wrong-state posterior for equal priors.

    Ties go to ``DARK`` with posterior error 0.5.
    """
    log_lb = np.asarray(log_lb, dtype=float)
    log_ld = np.asarray(log_ld, dtype=float)
    states = (log_lb > log_ld).astype(np.int8)
    with np.errstate(invalid="ignore"):
        gap = np.abs(log_lb - log_ld)
    gap = np.where(np.isnan(gap), 0.0, gap)
    return states, expit(-gap)


def bayes_states(series, params: DetectionParams) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`classify_bayesian` over the leading axes of ``series``."""
    series = np.asarray(series)
    return bayes_decide(_log_lik_bright(series, params), _log_lik_dark(series, params))


def classify_bayesian(series, params: DetectionParams) -> DetectionOutcome:
    params.check_subbins()
    arr = _check_series(np.asarray(_as_shot(series).subbin_counts), params)
    state, err = bayes_states(arr, params)
    return DetectionOutcome(State(int(state)), float(err))


@dataclass
class AdaptiveBayesClassifier:
    """Incremental Bayesian classifier that stops at a target posterior error.

    Holds per-stream state; use one instance per photon stream.
    """

    params: DetectionParams
    error_target: float
    max_bins: int
    counts: list[int] = field(default_factory=list)
    outcome: DetectionOutcome | None = None

    def __post_init__(self):
        if not 0.0 <= self.error_target <= 0.5:
            raise ContractError("error_target must lie in [0, 0.5]")
        if self.max_bins < 1:
            raise ContractError("max_bins must be >= 1")

    @property
    def done(self) -> bool:
        return self.outcome is not None and (
            self.outcome.converged or len(self.counts) >= self.max_bins
        )

    def push(self, count: int) -> DetectionOutcome:
        if self.done:
            raise ContractError("classifier already stopped")
        if count < 0:
            raise ValueError("photon counts must be non-negative")
        self.counts.append(int(count))
        arr = np.asarray(self.counts)
        state, err = bayes_decide(_log_lik_bright(arr, self.params), _log_lik_dark(arr, self.params))
        err = float(err)
        converged = err <= self.error_target
        self.outcome = DetectionOutcome(State(int(state)), err, converged)
        return self.outcome


def classify_bayesian_adaptive(
    stream: Iterable[int], params: DetectionParams, error_target: float, max_bins: int
) -> tuple[DetectionOutcome, int]:
    """Consume sub-bins until the posterior error reaches ``error_target``.

    Returns the outcome and the number of sub-bins used. If ``max_bins`` is
    exhausted first (or the stream ends), the outcome has ``converged=False``.
    """
    clf = AdaptiveBayesClassifier(params, error_target, max_bins)
    for count in stream:
        clf.push(count)
        if clf.done:
            break
    if clf.outcome is None:
        raise ContractError("empty photon stream")
    return clf.outcome, len(clf.counts)


# -- pi combination ------------------------------------------------------------

def combine_pi_states(first, second) -> np.ndarray:
    """Anti-correlated pairs keep the first state; equal pairs are discarded."""
    first = np.asarray(first, dtype=np.int8)
    second = np.asarray(second, dtype=np.int8)
    if np.any(first < 0) or np.any(second < 0):
        raise ContractError("cannot combine discarded detections")
    return np.where(first != second, first, np.int8(State.DISCARDED)).astype(np.int8)


def combine_pi(first: DetectionOutcome, second: DetectionOutcome) -> DetectionOutcome:
    if State.DISCARDED in (first.state, second.state):
        raise ContractError("cannot combine discarded detections")
    if first.state == second.state:
        return DetectionOutcome(State.DISCARDED)
    err = None
    if first.posterior_error is not None and second.posterior_error is not None:
        err = first.posterior_error * second.posterior_error
    return DetectionOutcome(first.state, err)


# -- distribution fit ------------------------------------------------------------

def fit_distribution(observed: PhotonDistribution, calib: CalibrationPair) -> float:
    """Bright amplitude from an unweighted least-squares mixture fit.

    The model ``a * p_B + (1 - a) * p_inf`` is linear in ``a``, so the
    minimiser is closed-form; the result is clamped to ``[0, 1]``.
    """
    n = max(observed.support_max, calib.bright_hist.support_max, calib.dark_hist.support_max)
    h = observed.padded(n)
    pb = calib.bright_hist.padded(n)
    pd = calib.dark_hist.padded(n)
    diff = pb - pd
    denom = float(np.dot(diff, diff))
    if denom <= 1e-300:
        raise DegenerateCalibrationError("calibration histograms are identical")
    a = float(np.dot(h - pd, diff)) / denom
    return min(max(a, 0.0), 1.0)


def fit_amplitudes(hists: np.ndarray, calib: CalibrationPair) -> np.ndarray:
    """:func:`fit_distribution` for a stack of normalised histograms (rows)."""
    hists = np.atleast_2d(np.asarray(hists, dtype=float))
    n = max(hists.shape[1] - 1, calib.bright_hist.support_max, calib.dark_hist.support_max)
    if hists.shape[1] < n + 1:
        hists = np.pad(hists, ((0, 0), (0, n + 1 - hists.shape[1])))
    pb = calib.bright_hist.padded(n)
    pd = calib.dark_hist.padded(n)
    diff = pb - pd
    denom = float(np.dot(diff, diff))
    if denom <= 1e-300:
        raise DegenerateCalibrationError("calibration histograms are identical")
    return np.clip((hists - pd) @ diff / denom, 0.0, 1.0)
