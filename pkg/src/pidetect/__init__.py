"""Photon-counting state detection for trapped-ion qubits.

Closed-form error models, per-shot classifiers, a counter-based Monte-Carlo
simulator and a small experiment harness.
"""

__version__ = "0.1.0"

from .params import DetectionParams, HIGH_RATE_PARAMS, REFERENCE_PARAMS, MG25_CONSTANTS, PhysicalConstants  # noqa: E402

__all__ = ["DetectionParams", "PhysicalConstants", "HIGH_RATE_PARAMS", "REFERENCE_PARAMS", "MG25_CONSTANTS", "__version__"]
