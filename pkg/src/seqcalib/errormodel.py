"""Estimation of the residual systematic-error distribution.

Negative controls are exposure-outcome pairs with no believed causal
relation, so their true log effect size is zero and any estimated effect
reflects systematic error plus sampling noise. Assuming the per-outcome
bias is drawn from a normal distribution, this module fits that
distribution's mean and standard deviation by maximizing the marginal
likelihood of the negative-control profiles, integrating the bias out of
each profile's likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize

from .likelihood import (
    CurvatureError,
    GridProfile,
    LikelihoodProfile,
    NormalApprox,
    UninformativeProfileError,
    mle_and_se,
)

__all__ = [
    "ErrorModel",
    "FitError",
    "InsufficientControlsError",
    "fit_error_model",
    "leave_one_out_models",
    "marginal_log_likelihood",
]

GH_POINTS = 64
_GH_X, _GH_W = np.polynomial.hermite.hermgauss(GH_POINTS)
_GH_LOGW = np.log(_GH_W)
_SIGMA_EPS = 1e-6
_LOG_2PI = math.log(2.0 * math.pi)


class InsufficientControlsError(ValueError):
    """Fewer usable negative-control profiles than the fit requires."""


class FitError(RuntimeError):
    """The systematic-error fit failed to produce a finite optimum."""


@dataclass(frozen=True)
class ErrorModel:
    """Fitted normal distribution of systematic error on the log effect scale.

    A model with mean 0 and sd 0 expresses certainty that no systematic
    error exists, which reduces every calibrated statistic to its
    uncalibrated counterpart.
    """

    mean: float
    sd: float
    n_controls: int = 0
    converged: bool = True
    n_excluded: int = 0

    def __post_init__(self) -> None:
        if not math.isfinite(self.mean):
            raise ValueError("mean must be finite")
        if not (math.isfinite(self.sd) and self.sd >= 0):
            raise ValueError("sd must be nonnegative and finite")


@dataclass(frozen=True)
class _Prepared:
    """Profiles rearranged for fast repeated objective evaluations."""

    norm_beta: np.ndarray
    norm_var: np.ndarray
    grid_x: tuple[np.ndarray, ...]
    grid_ll: tuple[np.ndarray, ...]
    grid_mode: np.ndarray
    grid_width: np.ndarray

    @property
    def n_profiles(self) -> int:
        return self.norm_beta.size + len(self.grid_x)


def _prepare(profiles: Sequence[LikelihoodProfile]) -> _Prepared:
    betas: list[float] = []
    variances: list[float] = []
    grid_x: list[np.ndarray] = []
    grid_ll: list[np.ndarray] = []
    modes: list[float] = []
    widths: list[float] = []
    for pr in profiles:
        if isinstance(pr, NormalApprox):
            betas.append(pr.point_estimate)
            variances.append(pr.standard_error**2)
        elif isinstance(pr, GridProfile):
            mode, width = mle_and_se(pr)
            grid_x.append(pr.grid_points)
            grid_ll.append(pr.log_likelihoods)
            modes.append(mode)
            widths.append(width)
        else:
            raise TypeError(f"unsupported profile: {type(pr).__name__}")
    return _Prepared(
        np.asarray(betas),
        np.asarray(variances),
        tuple(grid_x),
        tuple(grid_ll),
        np.asarray(modes),
        np.asarray(widths),
    )


def _evaluate(mu: float, sd: float, prep: _Prepared) -> float:
    total = 0.0
    if prep.norm_beta.size:
        # exact normal-normal convolution: estimate ~ N(mu, sd^2 + s_i^2)
        var = prep.norm_var + sd * sd
        total += float(
            np.sum(-0.5 * (_LOG_2PI + np.log(var)) - (prep.norm_beta - mu) ** 2 / (2.0 * var))
        )
    n_grids = len(prep.grid_x)
    if n_grids == 0:
        return total
    if sd == 0.0:
        for x, ll in zip(prep.grid_x, prep.grid_ll):
            total += float(np.interp(mu, x, ll, left=-np.inf, right=-np.inf))
        return total
    # Gauss-Hermite nodes placed at the approximate mode/scale of each
    # integrand product, so narrow likelihoods are still resolved
    sd2 = sd * sd
    prec = 1.0 / sd2 + 1.0 / prep.grid_width**2
    w_star = prec**-0.5
    m_star = (mu / sd2 + prep.grid_mode / prep.grid_width**2) / prec
    nodes = m_star[:, None] + math.sqrt(2.0) * w_star[:, None] * _GH_X[None, :]
    ll_nodes = np.empty_like(nodes)
    for i, (x, ll) in enumerate(zip(prep.grid_x, prep.grid_ll)):
        ll_nodes[i] = np.interp(nodes[i], x, ll, left=-np.inf, right=-np.inf)
    log_phi = -0.5 * (_LOG_2PI + math.log(sd2)) - (nodes - mu) ** 2 / (2.0 * sd2)
    exponents = (
        ll_nodes
        + log_phi
        + (_GH_X**2 + _GH_LOGW)[None, :]
        + 0.5 * math.log(2.0)
        + np.log(w_star)[:, None]
    )
    peak = exponents.max(axis=1)
    if not np.all(peak > -np.inf):
        return -math.inf  # some profile has zero mass under this (mu, sd)
    total += float(np.sum(peak + np.log(np.sum(np.exp(exponents - peak[:, None]), axis=1))))
    return total


def marginal_log_likelihood(
    mu: float, sd: float, profiles: Iterable[LikelihoodProfile]
) -> float:
    """Log marginal likelihood of (mu, sd) given negative-control profiles.

    Each profile contributes the log of its likelihood integrated against the
    normal bias density; at sd=0 the integral degenerates to the likelihood
    evaluated at mu. Normal-approximation profiles use the exact convolution;
    grid profiles use 64-point Gauss-Hermite quadrature.
    """
    if not math.isfinite(mu):
        raise ValueError("mu must be finite")
    if not (math.isfinite(sd) and sd >= 0):
        raise ValueError("sd must be nonnegative and finite")
    prep = _prepare(list(profiles))
    if prep.n_profiles == 0:
        raise ValueError("at least one profile is required")
    return _evaluate(mu, sd, prep)


def fit_error_model(profiles: Iterable[LikelihoodProfile]) -> ErrorModel:
    """Fit the systematic-error distribution to negative-control profiles.

    Maximizes the marginal likelihood over (mean, log sd) with a Nelder-Mead
    simplex from three starting points; the sd=0 boundary is reachable.
    Profiles without a usable interior maximum are dropped and counted in the
    returned model's n_excluded.

    Raises:
        InsufficientControlsError: Fewer than 2 usable profiles.
        FitError: No starting point reached a finite optimum.
    """
    usable: list[LikelihoodProfile] = []
    excluded = 0
    for pr in profiles:
        try:
            if isinstance(pr, GridProfile):
                mle_and_se(pr)  # usability probe
            usable.append(pr)
        except (CurvatureError, UninformativeProfileError):
            excluded += 1
    if len(usable) < 2:
        raise InsufficientControlsError(
            f"need at least 2 usable negative-control profiles, got {len(usable)}"
        )
    prep = _prepare(usable)
    mles = np.concatenate([prep.norm_beta, prep.grid_mode])

    def negative_objective(params: np.ndarray) -> float:
        mu, z = params
        sd = max(0.0, math.exp(min(z, 50.0)) - _SIGMA_EPS)
        value = _evaluate(mu, sd, prep)
        return -value if math.isfinite(value) else math.inf

    starts = [
        (0.0, 0.1),
        (0.0, 0.5),
        (float(np.mean(mles)), float(np.std(mles, ddof=1))),
    ]
    best = None
    for m0, s0 in starts:
        res = minimize(
            negative_objective,
            np.array([m0, math.log(s0 + _SIGMA_EPS)]),
            method="Nelder-Mead",
            options={"xatol": 1e-5, "fatol": 1e-6, "maxiter": 4000, "maxfev": 4000},
        )
        if best is None or res.fun < best.fun:
            best = res
    if best is None or not math.isfinite(best.fun):
        raise FitError("no finite optimum found for the systematic-error distribution")
    sd_hat = max(0.0, math.exp(min(float(best.x[1]), 50.0)) - _SIGMA_EPS)
    return ErrorModel(
        mean=float(best.x[0]),
        sd=sd_hat,
        n_controls=len(usable),
        converged=bool(best.success),
        n_excluded=excluded,
    )


def leave_one_out_models(
    profiles: Sequence[LikelihoodProfile],
) -> list[ErrorModel | None]:
    """Fit one model per profile, each excluding that profile from the fit.

    Entries are None where the reduced fit failed; failures do not abort the
    remaining fits. Result order matches the input order.
    """
    profiles = list(profiles)
    if len(profiles) < 3:
        raise InsufficientControlsError("leave-one-out requires at least 3 profiles")
    models: list[ErrorModel | None] = []
    for i in range(len(profiles)):
        rest = profiles[:i] + profiles[i + 1 :]
        try:
            models.append(fit_error_model(rest))
        except (InsufficientControlsError, FitError):
            models.append(None)
    return models
