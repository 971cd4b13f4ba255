"""Closed-form error, bias and retained-statistics predictions.

Notation used in the helpers below:

* ``p_b_le``  -- bright counts at or below the threshold (bright error)
* ``p_inf_gt`` -- background-only counts above the threshold
* ``dep_gt`` / ``dep_le`` -- joint probability of depumping inside the
  window and ending above / at-or-below the threshold
* ``p_d_gt`` / ``p_d_le`` -- full dark-state tail / head with depumping
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .params import DetectionParams, PhysicalConstants
from .stats import depumped_pmf, gammainc_pq, mean_bright, poisson_cdf, regularized_gamma

Z95 = 1.96
SINGULAR_ALPHA = 1e-6
TAIL_TOL = 1e-14
TAIL_RUN = 5


@dataclass(frozen=True)
class ClosedFormTerms:
    beta: float
    alpha: float


@dataclass(frozen=True)
class ErrorReport:
    scheme: str
    err_bright: float
    err_dark: float
    avg_error: float
    bias: float
    retained_fraction: float
    conf_halfwidth: float

    def as_row(self) -> dict:
        return {
            "scheme": self.scheme,
            "err_bright": self.err_bright,
            "err_dark": self.err_dark,
            "avg_error": self.avg_error,
            "bias": self.bias,
            "retained_fraction": self.retained_fraction,
            "conf_halfwidth": self.conf_halfwidth,
        }


def depumping_rate(constants: PhysicalConstants) -> float:
    """Off-resonant pumping rate of the dark state, in rad/s."""
    g = constants.linewidth
    return g**3 * constants.saturation / (8.0 * constants.hyperfine_splitting**2)


def closed_form_terms(params: DetectionParams) -> ClosedFormTerms:
    xi_b = mean_bright(params)
    beta = (xi_b - params.mean_background) * params.decay_time / params.detect_time
    return ClosedFormTerms(beta=beta, alpha=1.0 - 1.0 / beta)


def _log_scaled_lower_gamma(a: float, alpha: float, x: float) -> float:
    """``log( alpha**-a * gamma(a, alpha*x) / Gamma(a) )``.

    Equivalent to ``log int_0^x exp(-alpha u) u**(a-1) du / Gamma(a)``, which
    is analytic in ``alpha``. Both series used below have positive terms in
    their range, so there is no cancellation for negative ``alpha``.
    """
    if x == 0:
        return -math.inf
    y = alpha * x
    if y >= a + 1.0:
        lower, _ = gammainc_pq(a, y)
        return -a * math.log(alpha) + math.log(lower)
    n_max = int(abs(y) + 12.0 * math.sqrt(abs(y)) + 60.0)
    n = np.arange(n_max + 1, dtype=float)
    if y > 0:
        # P(a, y) = y^a e^-y sum_n y^n / Gamma(a + n + 1)
        terms = n * math.log(y) - gammaln(a + n + 1.0)
        return a * math.log(x) - y + float(logsumexp(terms))
    if y == 0:
        return a * math.log(x) - math.log(a) - math.lgamma(a)
    # gamma(a, y) = sum_n (-1)^n y^(a+n) / (n! (a+n)), all terms positive for y < 0
    terms = n * math.log(-y) - gammaln(n + 1.0) - np.log(a + n)
    return a * math.log(x) - math.lgamma(a) + float(logsumexp(terms))


def depumped_term(k: int, params: DetectionParams, terms: ClosedFormTerms | None = None) -> float:
    """Closed form of ``int_0^tau w(t) p(k | xi_t) dt`` for a single ``k``."""
    if math.isinf(params.decay_time):
        return 0.0
    terms = terms or closed_form_terms(params)
    xi_b = mean_bright(params)
    xi_inf = params.mean_background
    log_pref = -math.log(terms.beta) - xi_b / terms.beta
    hi = _log_scaled_lower_gamma(k + 1.0, terms.alpha, xi_b)
    lo = _log_scaled_lower_gamma(k + 1.0, terms.alpha, xi_inf)
    val = math.exp(log_pref + hi)
    if lo > -math.inf:
        val -= math.exp(log_pref + lo)
    return max(val, 0.0)


def depumped_detection(params: DetectionParams) -> tuple[float, float]:
    """Joint probabilities ``(dep_gt, dep_le)`` of depumping inside the window.

    ``dep_gt`` is the infinite sum over ``k > sigma``, truncated once the
    terms stay below ``TAIL_TOL`` for ``TAIL_RUN`` consecutive counts past the
    bright mean. When ``|alpha| < SINGULAR_ALPHA`` the quadrature
    representation is used instead.
    """
    if math.isinf(params.decay_time):
        return 0.0, 0.0
    sigma = params.threshold
    terms = closed_form_terms(params)
    if abs(terms.alpha) < SINGULAR_ALPHA:
        head = float(np.sum(depumped_pmf(np.arange(sigma + 1), params)))
        dep_total = -math.expm1(-params.detect_time / params.decay_time)
        return max(dep_total - head, 0.0), head

    dep_le = sum(depumped_term(k, params, terms) for k in range(sigma + 1))
    xi_b = mean_bright(params)
    dep_gt = 0.0
    run = 0
    k = sigma + 1
    while True:
        term = depumped_term(k, params, terms)
        dep_gt += term
        if term < TAIL_TOL and k > xi_b:
            run += 1
            if run >= TAIL_RUN:
                break
        else:
            run = 0
        k += 1
    return dep_gt, dep_le


@dataclass(frozen=True)
class _Pieces:
    p_b_le: float
    p_b_gt: float
    p_inf_le: float
    p_inf_gt: float
    survive: float
    dep_gt: float
    dep_le: float

    @property
    def p_d_gt(self) -> float:
        return self.dep_gt + self.survive * self.p_inf_gt

    @property
    def p_d_le(self) -> float:
        return self.dep_le + self.survive * self.p_inf_le


@functools.lru_cache(maxsize=4096)
def _pieces(params: DetectionParams) -> _Pieces:
    sigma = params.threshold
    p_b_le = poisson_cdf(sigma, mean_bright(params))
    p_inf_gt = regularized_gamma(sigma, params.mean_background, "lower")
    survive = 1.0 if math.isinf(params.decay_time) else params.depump_survival
    dep_gt, dep_le = depumped_detection(params)
    return _Pieces(
        p_b_le=p_b_le,
        p_b_gt=1.0 - p_b_le,
        p_inf_le=1.0 - p_inf_gt,
        p_inf_gt=p_inf_gt,
        survive=survive,
        dep_gt=dep_gt,
        dep_le=dep_le,
    )


def threshold_error_bright(params: DetectionParams) -> float:
    return poisson_cdf(params.threshold, mean_bright(params))


def threshold_error_dark(params: DetectionParams) -> float:
    """``p(xi_D > sigma)`` including depumping during the window."""
    return _pieces(params).p_d_gt


def bias_threshold(params: DetectionParams) -> float:
    p = _pieces(params)
    return p.p_d_le - p.p_b_gt


def pi_error_dark(params: DetectionParams) -> float:
    """Accepted-and-wrong probability of a pi-detection on the dark state."""
    p = _pieces(params)
    eps = params.spinflip_error
    swap = eps * (p.p_b_le - p.p_d_le)
    return p.dep_gt * (p.p_d_le + swap) + p.survive * p.p_inf_gt * (p.p_b_le - swap)


def pi_error_bright(params: DetectionParams) -> float:
    p = _pieces(params)
    eps = params.spinflip_error
    return p.p_b_le * (p.p_d_gt + eps * (p.p_b_gt - p.p_d_gt))


def bias_pi(params: DetectionParams) -> float:
    """Bias of pi-detection with an ideal spin-flip."""
    p = _pieces(params)
    return p.p_b_gt * p.survive * p.p_inf_le + p.p_d_gt * p.dep_le - p.p_d_le * p.p_b_gt


def pi_retained_fraction(params: DetectionParams) -> float:
    """Fraction of pi-detections that are not discarded.

    Ignores depumping and spin-flip infidelity.
    """
    p = _pieces(params)
    return 1.0 - p.p_b_le - p.p_inf_gt + 2.0 * p.p_b_le * p.p_inf_gt


def projection_noise_halfwidth(amplitude: float, n_shots: float) -> float:
    """Half-width of the 95% band ``1.96 sqrt(a (1 - a) / n)``."""
    if not n_shots > 0:
        raise ValueError("n_shots must be positive")
    if not 0.0 <= amplitude <= 1.0:
        raise ValueError("amplitude must lie in [0, 1]")
    return Z95 * math.sqrt(amplitude * (1.0 - amplitude) / n_shots)


def threshold_avg_error(params: DetectionParams, n_shots: int = 1000, amplitude: float = 0.5) -> ErrorReport:
    p = _pieces(params)
    err_b, err_d = p.p_b_le, p.p_d_gt
    return ErrorReport(
        scheme="threshold",
        err_bright=err_b,
        err_dark=err_d,
        avg_error=0.5 * (err_b + err_d),
        bias=p.p_d_le - p.p_b_gt,
        retained_fraction=1.0,
        conf_halfwidth=projection_noise_halfwidth(amplitude, n_shots),
    )


def pi_avg_error(params: DetectionParams, n_shots: int = 1000, amplitude: float = 0.5) -> ErrorReport:
    err_b, err_d = pi_error_bright(params), pi_error_dark(params)
    retained = pi_retained_fraction(params)
    return ErrorReport(
        scheme="pi",
        err_bright=err_b,
        err_dark=err_d,
        avg_error=0.5 * (err_b + err_d),
        bias=bias_pi(params),
        retained_fraction=retained,
        conf_halfwidth=projection_noise_halfwidth(amplitude, n_shots * retained),
    )
