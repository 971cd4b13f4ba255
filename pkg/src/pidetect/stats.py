"""Photon-count probability models and the special functions behind them."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad_vec
from scipy.special import gammaln, xlogy

from .params import DetectionParams

_EPS = 1e-16
_FPMIN = 1e-300
_MAX_ITER = 10_000


def _check_mean(mean):
    if np.any(np.asarray(mean) < 0) or np.any(np.isnan(mean)):
        raise ValueError("Poisson mean must be >= 0")


def _check_count(k):
    k = np.asarray(k)
    if np.any(k < 0):
        raise ValueError("photon count must be >= 0")


def log_poisson_pmf(k, mean):
    """Vectorised ``log p(k | mean)``; ``-inf`` where the mass is zero."""
    k = np.asarray(k, dtype=float)
    mean = np.asarray(mean, dtype=float)
    return xlogy(k, mean) - mean - gammaln(k + 1.0)


def poisson_pmf(k, mean):
    """Poisson probability of ``k`` photons at the given mean.

    Small counts use the direct expression, counts above 20 go through
    log-space to stay clear of overflow in ``mean**k`` and ``k!``.
    """
    _check_count(k)
    _check_mean(mean)
    k_arr = np.asarray(k)
    mean_arr = np.asarray(mean, dtype=float)
    if k_arr.ndim == 0 and mean_arr.ndim == 0:
        kk, mu = int(k_arr), float(mean_arr)
        if kk <= 20:
            return math.exp(-mu) * mu**kk / math.factorial(kk)
        return math.exp(log_poisson_pmf(kk, mu))
    return np.exp(log_poisson_pmf(k_arr, mean_arr))


def poisson_cdf(sigma: int, mean: float) -> float:
    """``p(xi <= sigma)`` by explicit summation of the mass function."""
    _check_count(sigma)
    _check_mean(mean)
    sigma = int(sigma)
    if mean == 0:
        return 1.0
    log_mu = math.log(mean)
    total = 0.0
    for k in range(sigma + 1):
        total += math.exp(k * log_mu - mean - math.lgamma(k + 1))
    return min(total, 1.0)


def _gamma_series(a: float, x: float) -> float:
    # P(a, x) for x < a + 1
    if x == 0:
        return 0.0
    ap = a
    term = 1.0 / a
    acc = term
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        acc += term
        if abs(term) < abs(acc) * _EPS:
            break
    else:
        raise ArithmeticError(f"incomplete gamma series did not converge (a={a}, x={x})")
    return acc * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_contfrac(a: float, x: float) -> float:
    # Q(a, x) for x >= a + 1, modified Lentz
    b = x + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    else:
        raise ArithmeticError(f"incomplete gamma fraction did not converge (a={a}, x={x})")
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammainc_pq(a: float, x: float) -> tuple[float, float]:
    """Regularised lower and upper incomplete gamma ``(P(a, x), Q(a, x))``."""
    if a <= 0:
        raise ValueError("a must be > 0")
    if x < 0:
        raise ValueError("x must be >= 0")
    if x < a + 1.0:
        p = _gamma_series(a, x)
        return p, 1.0 - p
    q = _gamma_contfrac(a, x)
    return 1.0 - q, q


def regularized_gamma(sigma: int, x: float, kind: str = "upper") -> float:
    """``Gamma(sigma+1, x)/sigma!`` (upper) or ``gamma(sigma+1, x)/sigma!`` (lower).

    The upper form equals ``poisson_cdf(sigma, x)``; the lower form is the
    Poisson tail ``p(xi > sigma)``.
    """
    if x < 0:
        raise ValueError("x must be >= 0")
    _check_count(sigma)
    lower, upper = gammainc_pq(int(sigma) + 1.0, float(x))
    if kind == "upper":
        return upper
    if kind == "lower":
        return lower
    raise ValueError(f"kind must be 'upper' or 'lower', got {kind!r}")


def mean_bright(params: DetectionParams) -> float:
    return params.rate_bright * params.detect_time


def mean_dark(params: DetectionParams) -> float:
    """Mean dark-state counts including depumping into the bright state."""
    rb, tau, T = params.rate_bright, params.detect_time, params.decay_time
    if math.isinf(T):
        return params.rate_background * tau
    return rb * tau - (rb - params.rate_background) * T * (-math.expm1(-tau / T))


def support_bound(mean: float) -> int:
    """Truncation index beyond which the Poisson tail is negligible."""
    return int(math.ceil(mean + 10.0 * math.sqrt(mean) + 20.0))


@dataclass(frozen=True, eq=False)
class PhotonDistribution:
    """Probability mass over photon counts ``k = 0 .. support_max``."""

    pmf: np.ndarray

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=float)
        if pmf.ndim != 1 or pmf.size == 0:
            raise ValueError("pmf must be a non-empty 1-d array")
        if np.any(pmf < 0) or np.any(pmf > 1 + 1e-12):
            raise ValueError("probabilities must lie in [0, 1]")
        pmf = np.clip(pmf, 0.0, 1.0)
        pmf.setflags(write=False)
        object.__setattr__(self, "pmf", pmf)

    @property
    def support_max(self) -> int:
        return self.pmf.size - 1

    @property
    def total(self) -> float:
        return float(self.pmf.sum())

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(self.pmf.size), self.pmf))

    def is_normalized(self, tol: float = 1e-9) -> bool:
        return abs(self.total - 1.0) <= tol

    def padded(self, support_max: int) -> np.ndarray:
        """The mass vector zero-padded out to ``support_max``."""
        if support_max < self.support_max:
            raise ValueError("cannot pad to a smaller support")
        out = np.zeros(support_max + 1)
        out[: self.pmf.size] = self.pmf
        return out

    def __getitem__(self, k: int) -> float:
        return float(self.pmf[k]) if 0 <= k < self.pmf.size else 0.0

    @classmethod
    def from_counts(cls, counts) -> "PhotonDistribution":
        counts = np.asarray(counts, dtype=float)
        total = counts.sum()
        if total <= 0:
            raise ValueError("histogram has no entries")
        return cls(counts / total)

    @classmethod
    def from_samples(cls, totals, support_max: int | None = None) -> "PhotonDistribution":
        totals = np.asarray(totals, dtype=np.int64)
        if support_max is not None and totals.size and totals.max() > support_max:
            raise ValueError("samples exceed the requested support")
        n = int(totals.max()) + 1 if support_max is None else support_max + 1
        return cls.from_counts(np.bincount(totals, minlength=n)[:n])

    @classmethod
    def poisson(cls, mean: float, support_max: int | None = None) -> "PhotonDistribution":
        _check_mean(mean)
        n = support_bound(mean) if support_max is None else support_max
        return cls(np.exp(log_poisson_pmf(np.arange(n + 1), mean)))


def _depump_integrand(params: DetectionParams, k: np.ndarray):
    # integration variable u = t / T, weight exp(-u) du
    rb, rinf, T, tau = params.rate_bright, params.rate_background, params.decay_time, params.detect_time

    def f(u):
        t = u * T
        mean_t = rinf * t + rb * (tau - t)
        return math.exp(-u) * np.exp(log_poisson_pmf(k, mean_t))

    return f


def depumped_pmf(k, params: DetectionParams, epsabs: float = 1e-10) -> np.ndarray:
    """Joint mass of "depumped inside the window" and ``k`` counts.

    ``int_0^tau w(t) p(k | R_inf t + R_B (tau - t)) dt`` evaluated by adaptive
    Gauss-Kronrod quadrature, vectorised over ``k``.
    """
    k = np.atleast_1d(np.asarray(k, dtype=float))
    T, tau = params.decay_time, params.detect_time
    if math.isinf(T):
        return np.zeros_like(k)
    # exp(-u) is below 1e-21 past u = 50
    upper = min(tau / T, 50.0)
    val, _ = quad_vec(_depump_integrand(params, k), 0.0, upper, epsabs=epsabs, epsrel=0.0)
    return np.asarray(val)


def dark_pmf(k, params: DetectionParams):
    """Dark-state photon-count distribution with exponential depumping."""
    _check_count(k)
    k_arr = np.asarray(k)
    ks = np.atleast_1d(k_arr).astype(float)
    tail = math.exp(-params.detect_time / params.decay_time) if not math.isinf(params.decay_time) else 1.0
    out = depumped_pmf(ks, params) + tail * np.exp(log_poisson_pmf(ks, params.mean_background))
    if k_arr.ndim == 0:
        return float(out[0])
    return out


def dark_distribution(params: DetectionParams) -> PhotonDistribution:
    n = support_bound(mean_bright(params))
    return PhotonDistribution(np.clip(dark_pmf(np.arange(n + 1), params), 0.0, 1.0))


def bright_distribution(params: DetectionParams) -> PhotonDistribution:
    return PhotonDistribution.poisson(mean_bright(params))


def background_distribution(params: DetectionParams, support_max: int | None = None) -> PhotonDistribution:
    return PhotonDistribution.poisson(params.mean_background, support_max)
