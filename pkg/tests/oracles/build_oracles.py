"""Reference values computed straight from the integral definitions.

Uses mpmath at 30 digits and nothing from ``pidetect``. Run from the repo
root to regenerate ``tests/data/oracles.json``::

    python tests/oracles/build_oracles.py
"""

import json
from pathlib import Path

import mpmath as mp

mp.mp.dps = 30

RB, RINF, TAU = mp.mpf("146.3e3"), mp.mpf("2.9e3"), mp.mpf("10e-6")
HR_RB, HR_RINF = mp.mpf("249e3"), mp.mpf("11e3")


def pois(k, mu):
    return mp.e ** (-mu) * mu**k / mp.factorial(k)


def pois_le(sigma, mu):
    return mp.fsum(pois(k, mu) for k in range(sigma + 1))


def dark_le(sigma, rb, rinf, T, tau):
    """p(xi_D <= sigma): depumping at time t with density exp(-t/T)/T."""
    dep = mp.quad(lambda t: mp.e ** (-t / T) / T * pois_le(sigma, rinf * t + rb * (tau - t)), [0, tau])
    return dep + mp.e ** (-tau / T) * pois_le(sigma, rinf * tau), dep


def dark_mean(rb, rinf, T, tau):
    dep = mp.quad(lambda t: mp.e ** (-t / T) / T * (rinf * t + rb * (tau - t)), [0, tau])
    return dep + mp.e ** (-tau / T) * rinf * tau


def pi_paths(sigma, rb, rinf, T, tau, eps):
    """Accepted-and-wrong probabilities by enumerating the two-detection tree."""
    surv = mp.e ** (-tau / T)
    pb_le = pois_le(sigma, rb * tau)
    pinf_le = pois_le(sigma, rinf * tau)
    pd_le, dep_le_full = dark_le(sigma, rb, rinf, T, tau)
    dep_total = 1 - surv
    dep_le = dep_le_full
    dep_gt = dep_total - dep_le
    pd_gt = 1 - pd_le
    pb_gt = 1 - pb_le
    # dark start: first says bright, second says dark
    err_d = surv * (1 - pinf_le) * ((1 - eps) * pb_le + eps * pd_le) + dep_gt * ((1 - eps) * pd_le + eps * pb_le)
    # bright start: first says dark, second says bright
    err_b = pb_le * ((1 - eps) * pd_gt + eps * pb_gt)
    # bias with an ideal flip: accepted-dark-of-dark minus bright-accepted-as-dark share
    correct_dark = surv * pinf_le * pb_gt + dep_le * pd_gt
    bias = correct_dark - pd_le * pb_gt
    return err_b, err_d, bias


def lik_dark(series, rb, rinf, T, ts):
    n = len(series)
    q = mp.e ** (-ts / T)
    total = q**n * mp.fprod(pois(k, rinf * ts) for k in series)
    for j in range(n):
        w = (1 - q) * q**j
        total += w * mp.fprod(pois(k, rinf * ts) for k in series[:j]) * mp.fprod(pois(k, rb * ts) for k in series[j:])
    return mp.log(total)


def distfit_std(n, rb, rinf, T, tau):
    kmax = 40
    pb = [pois(k, rb * tau) for k in range(kmax + 1)]
    pinf = [pois(k, rinf * tau) for k in range(kmax + 1)]
    pd = [dark_le(k, rb, rinf, T, tau)[0] - (dark_le(k - 1, rb, rinf, T, tau)[0] if k else 0) for k in range(12)]
    pd += [mp.mpf(0)] * (kmax + 1 - len(pd))
    d = [b - i for b, i in zip(pb, pinf)]
    q = [(b + x) / 2 for b, x in zip(pb, pd)]
    den = mp.fsum(x * x for x in d)
    m1 = mp.fsum(x * y for x, y in zip(d, q))
    m2 = mp.fsum(x * x * y for x, y in zip(d, q))
    return mp.sqrt((m2 - m1**2) / n) / den


def compute() -> dict[str, float]:
    T61, T60 = mp.mpf("61e-6"), mp.mpf("60e-6")
    out = {}
    out["poisson_pmf_0_1.463"] = pois(0, mp.mpf("1.463"))
    out["poisson_cdf_1_2.49"] = pois_le(1, mp.mpf("2.49"))
    out["mean_dark_ref"] = dark_mean(RB, RINF, T61, TAU)
    for s in range(3):
        out[f"threshold_error_dark_ref_sigma{s}"] = 1 - dark_le(s, RB, RINF, T61, TAU)[0]
    out["threshold_error_bright_ref"] = pois_le(0, RB * TAU)
    eb, ed, _ = pi_paths(0, RB, RINF, T61, TAU, mp.mpf("0.02"))
    out["pi_error_bright_ref"], out["pi_error_dark_ref"] = eb, ed
    eb, ed, _ = pi_paths(0, RB, RINF, T61, TAU, 0)
    out["pi_error_bright_ref_eps0"], out["pi_error_dark_ref_eps0"] = eb, ed
    _, _, out["bias_pi_T60"] = pi_paths(0, RB, RINF, T60, TAU, 0)
    out["bias_threshold_T60"] = dark_le(0, RB, RINF, T60, TAU)[0] - (1 - pois_le(0, RB * TAU))
    out["bias_threshold_Tinf"] = pois_le(0, RINF * TAU) - (1 - pois_le(0, RB * TAU))
    b, d = pois_le(0, RB * TAU), 1 - pois_le(0, RINF * TAU)
    out["pi_retained_ref"] = 1 - b - d + 2 * b * d
    out["likelihood_dark_00023"] = lik_dark([0, 0, 0, 2, 3], RB, RINF, T61, mp.mpf("2e-6"))
    gamma = 4 * mp.mpf("6.425e7")
    out["depumping_rate_hz"] = gamma**3 / (8 * (2 * mp.pi * mp.mpf("1.789e9")) ** 2) / (2 * mp.pi)
    s = mp.mpf(10) ** mp.mpf("-0.3")
    out["power_rate_bright_factor_m3db"] = 2 * s / (1 + s)
    for n in (300, 1000):
        out[f"distfit_std_n{n}"] = distfit_std(n, RB, RINF, T61, TAU)
    out["threshold_contrast_high_rate_sigma1"] = 1 - pois_le(1, HR_RB * TAU) - (1 - dark_le(1, HR_RB, HR_RINF, T61, TAU)[0])
    return {k: float(v) for k, v in out.items()}


def main():
    path = Path(__file__).resolve().parents[1] / "data" / "oracles.json"
    path.write_text(json.dumps(compute(), indent=2) + "\n")
    print(path)


if __name__ == "__main__":
    main()
