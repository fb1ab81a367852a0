"""One-sided p-values, with and without systematic-error calibration.

The alternative of interest is a positive log effect, so small p-values
correspond to large positive estimates. The calibrated p-value replaces
the point null with the fitted bias distribution, testing the estimate
against N(mean, sd^2 + se^2) instead of N(0, se^2).
"""

from __future__ import annotations

import math

from .errormodel import ErrorModel

__all__ = ["calibrated_p", "uncalibrated_p"]

_P_MIN = 1e-300
_P_MAX = 1.0 - 1e-16


def _upper_tail(z: float) -> float:
    p = 0.5 * math.erfc(z / math.sqrt(2.0))
    return min(max(p, _P_MIN), _P_MAX)


def uncalibrated_p(beta_hat: float, se: float) -> float:
    """Upper-tail p-value of the estimate against an exact zero null."""
    if not math.isfinite(beta_hat):
        raise ValueError("beta_hat must be finite")
    if not (math.isfinite(se) and se > 0):
        raise ValueError("se must be positive and finite")
    return _upper_tail(beta_hat / se)


def calibrated_p(beta_hat: float, se: float, model: ErrorModel) -> float:
    """Upper-tail p-value of the estimate against the fitted bias distribution.

    With a (0, 0) model this equals uncalibrated_p exactly.
    """
    if not math.isfinite(beta_hat):
        raise ValueError("beta_hat must be finite")
    if not (math.isfinite(se) and se > 0):
        raise ValueError("se must be positive and finite")
    return _upper_tail((beta_hat - model.mean) / math.sqrt(model.sd**2 + se**2))
