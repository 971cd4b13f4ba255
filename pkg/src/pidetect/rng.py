"""Counter-based random numbers keyed by ``(seed, shot index, draw index)``.

Every random number used by the simulator is a pure function of its key, so
a shot's record does not depend on batch size, evaluation order or thread
count. Keys are mixed with the SplitMix64 finaliser; uniforms carry 53 bits
and never hit 0 or 1 exactly.

Inverse-transform sampling keeps draws monotone in their parameter for a
fixed key: a larger Poisson mean never yields fewer counts, a shorter decay
time never yields a later depumping event. Scans that reuse shot indices
across scan points are therefore coupled (common random numbers).
"""

from __future__ import annotations

import numpy as np

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_SHOT_SALT = np.uint64(0xD1B54A32D192ED03)
_DRAW_SALT = np.uint64(0x8CB92BA72F3D8DD7)
_MASK64 = (1 << 64) - 1


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash_keys(seed: int, shots, draw) -> np.ndarray:
    """64-bit hash of ``(seed, shot, draw)``; ``shots``/``draw`` broadcast."""
    with np.errstate(over="ignore"):
        s = np.uint64(int(seed) & _MASK64)
        h = _mix64(np.asarray(s + _GOLDEN, dtype=np.uint64))
        shots = np.asarray(shots, dtype=np.uint64)
        h = _mix64(h ^ (shots * _SHOT_SALT + _GOLDEN))
        draw = np.asarray(draw, dtype=np.uint64)
        return _mix64(h ^ (draw * _DRAW_SALT + _GOLDEN))


def uniform(seed: int, shots, draw) -> np.ndarray:
    """Uniform variates on the open interval (0, 1)."""
    bits = hash_keys(seed, shots, draw) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def exponential(u: np.ndarray, scale) -> np.ndarray:
    """Exponential variates with the given mean by inversion."""
    return -np.asarray(scale, dtype=float) * np.log(u)


def poisson(u: np.ndarray, mean) -> np.ndarray:
    """Poisson variates by sequential inversion of the CDF.

    The search walks ``k = 0, 1, ...`` over the still-unresolved elements
    only. Means above 700 would underflow ``exp(-mean)`` and are rejected.
    """
    u = np.asarray(u, dtype=float)
    mean = np.broadcast_to(np.asarray(mean, dtype=float), u.shape)
    if np.any(mean < 0) or np.any(mean > 700):
        raise ValueError("Poisson mean must lie in [0, 700]")
    flat_u = u.ravel()
    flat_mean = mean.ravel()
    out = np.zeros(flat_u.size, dtype=np.int64)
    pmf = np.exp(-flat_mean)
    idx = np.nonzero(flat_u > pmf)[0]
    cdf = pmf[idx]
    pmf = pmf[idx]
    mu = flat_mean[idx]
    uu = flat_u[idx]
    k = 0
    while idx.size:
        k += 1
        pmf = pmf * mu / k
        cdf = cdf + pmf
        out[idx] = k
        # pmf == 0 only when rounding keeps cdf just short of u
        keep = (uu > cdf) & (pmf > 0)
        idx, pmf, cdf, mu, uu = idx[keep], pmf[keep], cdf[keep], mu[keep], uu[keep]
    return out.reshape(u.shape)


class ShotStream:
    """Draw interface for a single shot; mirrors the batch layout."""

    def __init__(self, seed: int, shot: int):
        self.seed = int(seed)
        self.shot = int(shot)

    def uniform(self, draw: int) -> float:
        return float(uniform(self.seed, self.shot, draw))

    def __repr__(self):
        return f"ShotStream(seed={self.seed:#x}, shot={self.shot})"
