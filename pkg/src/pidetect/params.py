"""Parameter containers for a single detection configuration.

All quantities are stored in SI units (seconds, counts per second, rad/s).
Unit conversion happens only at the configuration boundary (see ``pidetect.io``).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

US = 1e-6
KHZ = 1e3


class ParameterError(ValueError):
    """Raised when a parameter set violates its invariants."""


@dataclass(frozen=True)
class DetectionParams:
    """Rates and times describing one detection configuration.

    ``decay_time`` may be ``math.inf`` to switch depumping off.
    """

    rate_bright: float = 146.3e3
    rate_background: float = 2.9e3
    decay_time: float = 61e-6
    detect_time: float = 10e-6
    threshold: int = 0
    spinflip_error: float = 0.02
    subbin_time: float = 2e-6
    subbin_count: int = 5

    def __post_init__(self):
        if not self.rate_bright > self.rate_background:
            raise ParameterError("rate_bright must exceed rate_background")
        if self.rate_background < 0:
            raise ParameterError("rate_background must be >= 0")
        if not self.decay_time > 0:
            raise ParameterError("decay_time must be > 0")
        if not self.detect_time > 0:
            raise ParameterError("detect_time must be > 0")
        if int(self.threshold) != self.threshold or self.threshold < 0:
            raise ParameterError("threshold must be a non-negative integer")
        if not 0.0 <= self.spinflip_error <= 1.0:
            raise ParameterError("spinflip_error must lie in [0, 1]")
        if not self.subbin_time > 0:
            raise ParameterError("subbin_time must be > 0")
        if int(self.subbin_count) != self.subbin_count or self.subbin_count < 1:
            raise ParameterError("subbin_count must be a positive integer")
        object.__setattr__(self, "threshold", int(self.threshold))
        object.__setattr__(self, "subbin_count", int(self.subbin_count))

    @property
    def mean_background(self) -> float:
        return self.rate_background * self.detect_time

    @property
    def depump_survival(self) -> float:
        """Probability that no depumping happens within the window."""
        return math.exp(-self.detect_time / self.decay_time)

    def check_subbins(self, rtol: float = 1e-9) -> None:
        """Verify ``subbin_count * subbin_time == detect_time``.

        Only Bayesian schemes depend on the sub-bin layout, so this is called
        by them (and by the config loader) rather than at construction.
        """
        total = self.subbin_count * self.subbin_time
        if abs(total - self.detect_time) > rtol * self.detect_time:
            raise ParameterError(
                f"subbin_count * subbin_time = {total:g} s does not match "
                f"detect_time = {self.detect_time:g} s"
            )

    def with_detect_time(self, detect_time: float, subbin_time: float | None = None) -> "DetectionParams":
        """Copy with a new window, re-deriving the sub-bin count.

        With ``subbin_time=None`` the current sub-bin length is kept when it
        divides the window, otherwise the window becomes a single bin.
        """
        ts = self.subbin_time if subbin_time is None else subbin_time
        n = detect_time / ts
        if abs(n - round(n)) > 1e-9 * max(1.0, n) or round(n) < 1:
            if subbin_time is not None:
                raise ParameterError(
                    f"subbin_time {ts:g} s does not divide detect_time {detect_time:g} s"
                )
            return replace(self, detect_time=detect_time, subbin_time=detect_time, subbin_count=1)
        return replace(self, detect_time=detect_time, subbin_time=ts, subbin_count=int(round(n)))

    def replace(self, **changes) -> "DetectionParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PhysicalConstants:
    """Atomic constants entering the off-resonant depumping rate.

    ``saturation`` is the laser intensity in units of the saturation
    intensity at the calibration (0 dB) point.
    """

    linewidth: float = 4 * 6.425e7
    hyperfine_splitting: float = 2 * math.pi * 1.789e9
    saturation: float = 1.0

    def __post_init__(self):
        for name in ("linewidth", "hyperfine_splitting", "saturation"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be > 0")


# Rates used for the theoretical error maps and bias curves.
REFERENCE_PARAMS = DetectionParams()
# Rates measured for the example histograms and the Rabi data set.
HIGH_RATE_PARAMS = DetectionParams(rate_bright=249e3, rate_background=11e3)
MG25_CONSTANTS = PhysicalConstants()
