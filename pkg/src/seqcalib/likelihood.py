"""Count-model likelihoods for sequential safety surveillance.

Two surveillance models are supported: observed-versus-expected event
counts (Poisson) and exposed-versus-total case counts (binomial). Each
outcome's evidence about the log effect size is carried either as a
normal approximation (point estimate plus standard error) or as a
log-likelihood grid, from which maximum-likelihood estimates, standard
errors, and one-sided log-likelihood ratios are extracted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

__all__ = [
    "BinomialCounts",
    "CountData",
    "CurvatureError",
    "GRID_LOWER",
    "GRID_POINTS",
    "GRID_UPPER",
    "GridProfile",
    "LikelihoodProfile",
    "NormalApprox",
    "PoissonCounts",
    "UninformativeProfileError",
    "binomial_llr",
    "mle_and_se",
    "poisson_llr",
    "profile_from_counts",
    "tilted_proportion",
]

GRID_LOWER = -4.0
GRID_UPPER = 4.0
GRID_POINTS = 1000
_GRID_MARGIN = 2.0  # keeps the analytic MLE comfortably interior


class UninformativeProfileError(ValueError):
    """Counts admit no interior maximum for the log effect size (e.g. zero events)."""


class CurvatureError(ValueError):
    """Grid log-likelihood has no usable concave interior maximum."""


@dataclass(frozen=True)
class NormalApprox:
    """Normal approximation to a log effect-size likelihood.

    Attributes:
        point_estimate: Maximum-likelihood log effect size.
        standard_error: Standard error of the estimate, strictly positive.
        outcome_id: Optional identifier of the outcome this profile belongs to.
    """

    point_estimate: float
    standard_error: float
    outcome_id: str = ""

    def __post_init__(self) -> None:
        if not math.isfinite(self.point_estimate):
            raise ValueError("point_estimate must be finite")
        if not (math.isfinite(self.standard_error) and self.standard_error > 0):
            raise ValueError("standard_error must be positive and finite")


@dataclass(frozen=True, eq=False)
class GridProfile:
    """Log-likelihood of the log effect size tabulated on an ascending grid."""

    grid_points: np.ndarray
    log_likelihoods: np.ndarray
    outcome_id: str = ""

    def __post_init__(self) -> None:
        x = np.asarray(self.grid_points, dtype=float)
        ll = np.asarray(self.log_likelihoods, dtype=float)
        if x.ndim != 1 or ll.ndim != 1 or x.size != ll.size:
            raise ValueError("grid_points and log_likelihoods must be 1-D and equal length")
        if x.size < 3:
            raise ValueError("grid needs at least 3 points")
        if not np.all(np.diff(x) > 0):
            raise ValueError("grid_points must be strictly ascending")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(ll))):
            raise ValueError("grid values must be finite")
        x.flags.writeable = False
        ll.flags.writeable = False
        object.__setattr__(self, "grid_points", x)
        object.__setattr__(self, "log_likelihoods", ll)


LikelihoodProfile = NormalApprox | GridProfile


@dataclass(frozen=True)
class PoissonCounts:
    """Observed event count against a known expected count."""

    observed: int
    expected: float

    def __post_init__(self) -> None:
        if self.observed < 0 or self.observed != int(self.observed):
            raise ValueError("observed must be a nonnegative integer")
        if not (math.isfinite(self.expected) and self.expected > 0):
            raise ValueError("expected must be positive and finite")


@dataclass(frozen=True)
class BinomialCounts:
    """Exposed event count among a total, against a null exposure proportion."""

    exposed: int
    total: int
    null_proportion: float

    def __post_init__(self) -> None:
        if self.total < 1 or self.total != int(self.total):
            raise ValueError("total must be a positive integer")
        if self.exposed < 0 or self.exposed > self.total or self.exposed != int(self.exposed):
            raise ValueError("exposed must be an integer in [0, total]")
        if not (0.0 < self.null_proportion < 1.0):
            raise ValueError("null_proportion must lie in (0, 1)")


CountData = PoissonCounts | BinomialCounts


def poisson_llr(observed: float, expected: float) -> float:
    """One-sided log-likelihood ratio for a Poisson count against its null expectation.

    Returns 0 when the rate MLE does not exceed the null (observed <= expected),
    otherwise the log of the Poisson pmf ratio with the rate set to the MLE.
    """
    if not (math.isfinite(observed) and math.isfinite(expected)):
        raise ValueError("observed and expected must be finite")
    if observed < 0:
        raise ValueError("observed must be nonnegative")
    if expected <= 0:
        raise ValueError("expected must be positive")
    if observed <= expected:
        return 0.0
    return observed * math.log(observed / expected) + expected - observed


def binomial_llr(exposed: int, total: int, p: float) -> float:
    """One-sided log-likelihood ratio for an exposed fraction against null proportion p.

    Returns 0 when the observed fraction does not exceed p, otherwise the log of
    the binomial pmf ratio with the success probability set to the observed fraction.
    """
    if total < 1:
        raise ValueError("total must be at least 1")
    if exposed < 0 or exposed > total:
        raise ValueError("exposed must lie in [0, total]")
    if not (0.0 < p < 1.0):
        raise ValueError("p must lie in (0, 1)")
    q = exposed / total
    if q <= p:
        return 0.0
    llr = exposed * math.log(q / p)
    if exposed < total:
        llr += (total - exposed) * math.log((1.0 - q) / (1.0 - p))
    return llr


def tilted_proportion(p: float, log_odds_shift):
    """Shift a proportion on the log-odds scale.

    Returns the proportion whose odds are exp(log_odds_shift) times the odds
    of p. A zero shift returns p exactly. Accepts scalar or array shifts.
    """
    if not (0.0 < p < 1.0):
        raise ValueError("p must lie in (0, 1)")
    logit_p = math.log(p / (1.0 - p))
    shift = np.asarray(log_odds_shift, dtype=float)
    z = np.clip(logit_p + shift, -500.0, 500.0)
    out = np.where(shift == 0.0, p, expit(z))
    if np.isscalar(log_odds_shift) or shift.ndim == 0:
        return float(out)
    return out


def profile_from_counts(
    data: CountData,
    *,
    lower: float = GRID_LOWER,
    upper: float = GRID_UPPER,
    points: int = GRID_POINTS,
    outcome_id: str = "",
) -> GridProfile:
    """Tabulate the log-likelihood of the log effect size for one outcome's counts.

    The default grid covers [-4, 4]; it is widened automatically when the analytic
    MLE falls near or beyond an endpoint, so the maximum is always interior.

    Raises:
        UninformativeProfileError: Zero events (Poisson), or all/none of the
            events exposed (binomial), where no interior maximum exists.
    """
    if points < 3:
        raise ValueError("points must be at least 3")
    if not lower < upper:
        raise ValueError("lower must be below upper")

    if isinstance(data, PoissonCounts):
        if data.observed == 0:
            raise UninformativeProfileError("no events observed; likelihood has no interior maximum")
        mle = math.log(data.observed / data.expected)
        lo = min(lower, mle - _GRID_MARGIN)
        hi = max(upper, mle + _GRID_MARGIN)
        beta = np.linspace(lo, hi, points)
        ll = data.observed * (math.log(data.expected) + beta) - data.expected * np.exp(beta)
    elif isinstance(data, BinomialCounts):
        if data.exposed == 0 or data.exposed == data.total:
            raise UninformativeProfileError(
                "exposed count at the boundary; likelihood has no interior maximum"
            )
        o, n, p = data.exposed, data.total, data.null_proportion
        mle = math.log((o / (n - o)) * (1.0 - p) / p)
        lo = min(lower, mle - _GRID_MARGIN)
        hi = max(upper, mle + _GRID_MARGIN)
        beta = np.linspace(lo, hi, points)
        ptilde = tilted_proportion(p, beta)
        ll = o * np.log(ptilde) + (n - o) * np.log1p(-ptilde)
    else:
        raise TypeError(f"unsupported count data: {type(data).__name__}")
    return GridProfile(beta, ll, outcome_id=outcome_id)


def mle_and_se(profile: LikelihoodProfile) -> tuple[float, float]:
    """Extract the point estimate and standard error from a likelihood profile.

    Normal approximations return their fields verbatim. Grid profiles return the
    grid argmax (ties broken toward the smallest log effect size) and a standard
    error from the local curvature of the log-likelihood at the maximum.

    Raises:
        CurvatureError: Maximum on the grid boundary, or non-concave neighborhood.
    """
    if isinstance(profile, NormalApprox):
        return profile.point_estimate, profile.standard_error
    if not isinstance(profile, GridProfile):
        raise TypeError(f"unsupported profile: {type(profile).__name__}")
    x = profile.grid_points
    ll = profile.log_likelihoods
    i = int(np.argmax(ll))
    if i == 0 or i == x.size - 1:
        raise CurvatureError("log-likelihood maximum sits on the grid boundary")
    h1 = x[i] - x[i - 1]
    h2 = x[i + 1] - x[i]
    # second derivative of the parabola through the three points around the max
    d2 = 2.0 * ((ll[i + 1] - ll[i]) / h2 - (ll[i] - ll[i - 1]) / h1) / (h1 + h2)
    if not d2 < 0:
        raise CurvatureError("log-likelihood is not concave at its maximum")
    return float(x[i]), float(1.0 / math.sqrt(-d2))
