"""Acceptance criteria, each at its stated tolerance and runtime budget."""

import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from pidetect import experiments as ex, montecarlo as mc, theory as th
from pidetect.params import REFERENCE_PARAMS, PhysicalConstants, DetectionParams

TESTS = Path(__file__).parent


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


def test_criterion_1_bias(report):
    with Timer() as t:
        p = REFERENCE_PARAMS.replace(decay_time=60e-6)
        b_th, b_pi = th.bias_threshold(p), th.bias_pi(p)
    ok = abs(b_th - 0.131) <= 0.003 and abs(b_pi + 0.052) <= 0.003 and t.elapsed < 1.0
    assert report(1, ok, f"b_th={b_th:.4f} (0.131±0.003), b_pi={b_pi:.4f} (-0.052±0.003), {t.elapsed:.2f}s < 1s")


def test_criterion_2_depumping_rate(report):
    rate = th.depumping_rate(PhysicalConstants(linewidth=4 * 6.425e7, hyperfine_splitting=2 * math.pi * 1.789e9,
                                               saturation=1.0))
    target = 2 * math.pi * 2.7e3
    ok = abs(rate / target - 1) <= 0.10
    assert report(2, ok, f"rate/2pi={rate / (2 * math.pi):.1f} Hz vs 2.7 kHz ±10%")


def random_parameter_sets(n=20, seed=2024):
    rng = np.random.default_rng(seed)
    sets = []
    for _ in range(n):
        bins = int(rng.integers(2, 21))
        sets.append(DetectionParams(
            rate_bright=float(rng.uniform(60e3, 400e3)),
            rate_background=float(rng.uniform(0.5e3, 15e3)),
            decay_time=float(rng.uniform(20e-6, 400e-6)),
            detect_time=bins * 2e-6,
            threshold=int(rng.integers(0, 4)),
            spinflip_error=float(rng.uniform(0.0, 0.05)),
            subbin_time=2e-6,
            subbin_count=bins,
        ))
    return sets


def _z(measured, expected, n):
    sd = math.sqrt(max(expected * (1 - expected), 1.0 / n) / n)
    return abs(measured - expected) / sd


def oracle_equivalence(n_shots=100_000, seed=mc.DEFAULT_SEED):
    worst = []
    for i, p in enumerate(random_parameter_sets()):
        cfg = mc.SimConfig(p, n_shots=n_shots, seed=seed, shot_offset=4 * i * n_shots)
        m = mc.measure_errors(cfg, ("threshold", "pi"))
        checks = {
            "threshold_bright": (m["threshold"].err_bright, th.threshold_error_bright(p), n_shots),
            "threshold_dark": (m["threshold"].err_dark, th.threshold_error_dark(p), n_shots),
            "pi_bright": (m["pi"].err_bright, th.pi_error_bright(p), n_shots),
            "pi_dark": (m["pi"].err_dark, th.pi_error_dark(p), n_shots),
        }
        # the closed-form discard rate describes ideal pulses without depumping
        ideal = cfg.replace(params=p.replace(decay_time=math.inf), spinflip_enabled=False,
                            shot_offset=(4 * i + 2) * n_shots)
        r = mc.measure_errors(ideal, ("pi",))["pi"].retained_fraction
        checks["retained"] = (r, th.pi_retained_fraction(p), 2 * n_shots)
        for name, (meas, exp, n) in checks.items():
            worst.append((_z(meas, exp, n), i, name, meas, exp))
    return worst


def test_criterion_3_oracle_equivalence(report):
    with Timer() as t:
        zs = oracle_equivalence()
    z, i, name, meas, exp = max(zs)
    n_over = sum(1 for item in zs if item[0] > 3)
    ok = n_over == 0 and t.elapsed < 60
    assert report(3, ok, f"{len(zs)} comparisons, max |z|={z:.2f} (set {i}, {name}: {meas:.5f} vs {exp:.5f}), "
                         f"{n_over} beyond 3 sigma, {t.elapsed:.1f}s < 60s")


def test_criterion_4_distfit_scaling(report):
    with Timer() as t:
        res = ex.run_scenario("distfit_study", settings={"repeats": 10_000})
    std = {r["n_experiments"]: r["std_amplitude"] for r in res.tables["std"]}
    slope = res.summary["loglog_slope"]
    ok = all(0.02 <= std[n] <= 0.04 for n in (300, 1000)) and abs(slope + 0.5) <= 0.05 and t.elapsed < 120
    assert report(4, ok, f"std(300)={std[300]:.4f}, std(1000)={std[1000]:.4f} in [0.02,0.04], "
                         f"slope={slope:.3f} (-0.5±0.05), {t.elapsed:.1f}s < 120s")


def test_criterion_5_bayesian_crossover(report):
    with Timer() as t:
        res = ex.run_scenario("error_vs_time", settings={"n_events": 2000})
    mc_rows = [r for r in res.tables["curves"] if r["method"] == "monte_carlo"]
    err = {(r["scheme"], round(r["detect_time"] * 1e6)): r["avg_error"] for r in mc_rows}
    gap10 = err["bayesian", 10] - err["threshold", 10]
    long = [tau for (s, tau) in err if s == "bayesian" and tau >= 25]
    worse = [tau for tau in long if not err["bayesian", tau] < err["threshold", tau]]
    ok = abs(gap10) < 0.01 and not worse and long and t.elapsed < 120
    assert report(5, ok, f"gap at 10us={gap10:+.4f} (<0.01), Bayesian < threshold at {len(long) - len(worse)}/"
                         f"{len(long)} points with tau>=25us, {t.elapsed:.1f}s < 120s")


def test_criterion_6_power_ordering(report):
    with Timer() as t:
        s = ex.run_scenario("power_scan").summary
    th_s, pi_s, fit_s = s["slope_threshold"], s["slope_pi"], s["slope_distfit"]
    ok = th_s > 0.01 and abs(pi_s) < 0.02 and abs(pi_s) < abs(th_s) and abs(pi_s) < abs(fit_s) and t.elapsed < 60
    assert report(6, ok, f"slopes/dB threshold={th_s:+.4f} (>0.01), pi={pi_s:+.4f} (|.|<0.02), "
                         f"distfit={fit_s:+.4f}, {t.elapsed:.1f}s < 60s")


def test_criterion_7_rabi_contrast(report):
    with Timer() as t:
        res = ex.run_scenario("rabi_contrast")
    rows = res.tables["contrast"]
    c_th = {r["threshold"]: r["contrast"] for r in rows if r["scheme"] == "threshold"}
    c_pi = {r["threshold"]: r["contrast"] for r in rows if r["scheme"] == "pi"}
    stat = {r["threshold"]: r["pi_stat"] for r in rows if r["scheme"] == "threshold"}
    gaps = {s: abs(c_th[s] - stat[s]) for s in c_th if s >= 2}
    pi_wins = all(c_pi[s] > c_th[s] for s in c_th if s >= 1)
    ok = max(gaps.values()) < 0.03 and pi_wins and t.elapsed < 120
    assert report(7, ok, f"max |A_th - p_stat| for sigma>=2 = {max(gaps.values()):.4f} (<0.03), "
                         f"pi > threshold for all sigma>=1: {pi_wins}, {t.elapsed:.1f}s < 120s")


def test_criterion_8_depumping_curve(report):
    with Timer() as t:
        s = ex.run_scenario("depumping_curve").summary
    ok = abs(s["decay_time_rel_error"]) < 0.05 and abs(s["rate_bright_rel_error"]) < 0.02 and t.elapsed < 60
    assert report(8, ok, f"T={s['fitted_decay_time'] * 1e6:.2f}us ({s['decay_time_rel_error']:+.2%}, <5%), "
                         f"R_B {s['rate_bright_rel_error']:+.2%} (<2%), {t.elapsed:.1f}s < 60s")


PROPERTY_SUITES = ["test_stats.py", "test_theory.py", "test_detectors.py", "test_rng.py", "test_montecarlo.py",
                   "test_experiments.py", "test_io.py"]


def test_criterion_9_property_suites(report):
    cmd = [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *(str(TESTS / f) for f in PROPERTY_SUITES)]
    proc = subprocess.run(cmd, capture_output=True, text=True, cwd=TESTS.parent)
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr.strip()[-200:]
    failed = [ln.split(" - ")[0].removeprefix("FAILED ") for ln in proc.stdout.splitlines()
              if ln.startswith("FAILED")]
    detail = tail + (f"; failing: {', '.join(failed)}" if failed else "")
    assert report(9, proc.returncode == 0, detail)
