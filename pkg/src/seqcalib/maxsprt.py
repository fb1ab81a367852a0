"""Monte Carlo critical values for maximum sequential probability ratio tests.

A surveillance run makes T scheduled looks at accruing data and signals as
soon as the log-likelihood ratio at a look exceeds a critical value chosen
so that the probability of any exceedance under the null is at most alpha.
Critical values are located by simulating the null: replicate count paths
are drawn look by look, the maximum LLR per replicate is collected, and the
critical value is the smallest realized maximum whose exceedance fraction
does not exceed alpha.

The calibrated variant draws a systematic-error term for every look of
every replicate and tilts the null sampling distribution accordingly (rate
multiplier for Poisson, odds multiplier for binomial) while the LLR is
still evaluated against the unadjusted null, yielding a wider null and a
larger critical value when bias is present.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errormodel import ErrorModel
from .likelihood import binomial_llr, poisson_llr, tilted_proportion

__all__ = [
    "CriticalValueResult",
    "LookSchedule",
    "MonteCarloConfig",
    "compute_calibrated_cv",
    "compute_cv",
    "dynamic_cv",
    "llr_sequence",
]

_BATCH = 1 << 16
_MASK64 = (1 << 64) - 1
_STREAM_COUNTS = 0
_STREAM_BIAS = 1
_DOMAIN_TAG = 0x6D63  # keeps these streams disjoint from data-generation streams


@dataclass(frozen=True)
class LookSchedule:
    """Number and size of scheduled looks for one surveillance run.

    expected_increments holds the additional expected event count accrued
    between consecutive looks (not cumulative totals). For the binomial
    model, exposure_proportion is the null probability that an event is
    exposed, and each look's expected count is rounded to the nearest
    positive integer to serve as the binomial trial count.
    """

    expected_increments: tuple[float, ...]
    alpha: float
    model: str = "poisson"
    exposure_proportion: float | None = None

    def __post_init__(self) -> None:
        increments = tuple(float(e) for e in self.expected_increments)
        object.__setattr__(self, "expected_increments", increments)
        if not increments:
            raise ValueError("schedule needs at least one look")
        if any(not (math.isfinite(e) and e > 0) for e in increments):
            raise ValueError("expected increments must be positive and finite")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")
        if self.model not in ("poisson", "binomial"):
            raise ValueError("model must be 'poisson' or 'binomial'")
        if self.model == "binomial":
            p = self.exposure_proportion
            if p is None or not (0.0 < p < 1.0):
                raise ValueError("binomial schedules need exposure_proportion in (0, 1)")
        elif self.exposure_proportion is not None:
            raise ValueError("exposure_proportion only applies to binomial schedules")

    @property
    def n_looks(self) -> int:
        return len(self.expected_increments)

    def cumulative_expected(self) -> np.ndarray:
        return np.cumsum(self.expected_increments)

    def binomial_trials(self) -> np.ndarray:
        """Per-look trial counts: expected increments rounded, floored at 1."""
        return np.maximum(1, np.rint(self.expected_increments)).astype(np.int64)


@dataclass(frozen=True)
class MonteCarloConfig:
    """Replicate count and base seed for the null simulation."""

    replicates: int
    base_seed: int = 0

    def __post_init__(self) -> None:
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")


@dataclass(frozen=True)
class CriticalValueResult:
    """Critical value plus the fraction of null replicates strictly exceeding it."""

    cv: float
    attained_alpha: float
    per_look: tuple[float, ...] | None = None


def _rng(base_seed: int, batch: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([_DOMAIN_TAG, base_seed & _MASK64, batch, stream])
    )


def _normalize_models(
    models: ErrorModel | Sequence[ErrorModel], n_looks: int
) -> list[ErrorModel]:
    if isinstance(models, ErrorModel):
        return [models] * n_looks
    models = list(models)
    if len(models) == 1:
        return models * n_looks
    if len(models) != n_looks:
        raise ValueError(f"need 1 or {n_looks} error models, got {len(models)}")
    return models


def _poisson_llr_rows(obs_cum: np.ndarray, exp_cum: np.ndarray) -> np.ndarray:
    ratio = np.maximum(obs_cum / exp_cum, 1e-300)
    values = obs_cum * np.log(ratio) + exp_cum - obs_cum
    return np.where(obs_cum > exp_cum, values, 0.0)


def _binomial_llr_rows(obs_cum: np.ndarray, trials_cum: np.ndarray, p: float) -> np.ndarray:
    q = obs_cum / trials_cum
    term1 = obs_cum * np.log(np.maximum(q, 1e-300) / p)
    term2 = (trials_cum - obs_cum) * np.log(np.maximum(1.0 - q, 1e-300) / (1.0 - p))
    return np.where(q > p, term1 + term2, 0.0)


def _llr_max_samples(
    schedule: LookSchedule,
    mc: MonteCarloConfig,
    models: list[ErrorModel] | None,
) -> np.ndarray:
    """Maximum LLR across looks for every null replicate.

    Replicates are simulated in fixed-size batches, each batch drawing from
    its own deterministic stream, so results depend only on (schedule,
    models, replicates, base_seed). Bias draws use a stream separate from
    count draws, which makes a (0, 0) model reproduce the uncalibrated
    draws bit for bit.
    """
    n_replicates = mc.replicates
    increments = np.asarray(schedule.expected_increments)
    n_looks = schedule.n_looks
    poisson = schedule.model == "poisson"
    if poisson:
        exp_cum = schedule.cumulative_expected()
    else:
        trials = schedule.binomial_trials()
        trials_cum = np.cumsum(trials)
        p = schedule.exposure_proportion

    out = np.empty(n_replicates)
    for start in range(0, n_replicates, _BATCH):
        size = min(_BATCH, n_replicates - start)
        batch = start // _BATCH
        count_rng = _rng(mc.base_seed, batch, _STREAM_COUNTS)
        if models is None:
            innovation = None
        else:
            # one bias innovation per replicate, scaled per look: systematic
            # error is a fixed property of an outcome, not redrawn between looks
            bias_rng = _rng(mc.base_seed, batch, _STREAM_BIAS)
            innovation = bias_rng.standard_normal(size)
        counts = np.empty((size, n_looks))
        for t in range(n_looks):
            if innovation is None:
                bias = None
            else:
                bias = models[t].mean + models[t].sd * innovation
            if poisson:
                lam = np.full(size, increments[t]) if bias is None else increments[t] * np.exp(bias)
                counts[:, t] = count_rng.poisson(lam)
            else:
                prob = np.full(size, p) if bias is None else tilted_proportion(p, bias)
                counts[:, t] = count_rng.binomial(trials[t], prob)
        obs_cum = np.cumsum(counts, axis=1)
        if poisson:
            llr = _poisson_llr_rows(obs_cum, exp_cum)
        else:
            llr = _binomial_llr_rows(obs_cum, trials_cum, p)
        out[start : start + size] = llr.max(axis=1)
    return out


def _select_cv(llr_max: np.ndarray, alpha: float) -> tuple[float, float]:
    n = llr_max.size
    allowed = int(math.floor(alpha * n + 1e-9))
    if allowed >= n:
        cv = 0.0
    else:
        cv = float(np.sort(llr_max)[n - allowed - 1])
    attained = float(np.count_nonzero(llr_max > cv) / n)
    return cv, attained


def _check_replicates(mc: MonteCarloConfig) -> None:
    if mc.replicates < 1000:
        raise ValueError("critical value computation needs at least 1000 replicates")
    if mc.replicates < 100_000:
        warnings.warn(
            f"{mc.replicates} replicates may place the critical value imprecisely; "
            "100000 or more is recommended",
            stacklevel=3,
        )


def compute_cv(schedule: LookSchedule, mc: MonteCarloConfig) -> CriticalValueResult:
    """Critical value under the exact null (no systematic error).

    The returned cv is the smallest realized per-replicate maximum LLR whose
    strict exceedance fraction is at most the schedule's alpha; signaling
    compares LLR > cv.
    """
    _check_replicates(mc)
    samples = _llr_max_samples(schedule, mc, None)
    cv, attained = _select_cv(samples, schedule.alpha)
    return CriticalValueResult(cv=cv, attained_alpha=attained)


def compute_calibrated_cv(
    schedule: LookSchedule,
    models: ErrorModel | Sequence[ErrorModel],
    mc: MonteCarloConfig,
) -> CriticalValueResult:
    """Critical value under a null that includes the fitted systematic error.

    Each replicate draws one standard-normal bias innovation, scaled at every
    look by that look's error model (a single model is broadcast to all
    looks), so the bias is held fixed across a replicate's trajectory just as
    it is for a real outcome. Counts are sampled from the tilted null while
    the LLR is still computed against the unadjusted expectations.
    """
    _check_replicates(mc)
    model_list = _normalize_models(models, schedule.n_looks)
    samples = _llr_max_samples(schedule, mc, model_list)
    cv, attained = _select_cv(samples, schedule.alpha)
    return CriticalValueResult(cv=cv, attained_alpha=attained)


def dynamic_cv(
    schedule: LookSchedule,
    look_models: Sequence[ErrorModel],
    mc: MonteCarloConfig,
) -> CriticalValueResult:
    """Per-look critical values from the error model available at each look.

    The model fitted at look t is broadcast across the whole schedule to
    compute cv_t, reflecting that it is the best estimate of systematic error
    at that point; surveillance compares LLR_t against cv_t.
    """
    models = list(look_models)
    if len(models) != schedule.n_looks:
        raise ValueError(f"need one model per look ({schedule.n_looks}), got {len(models)}")
    per_look = []
    last = None
    for model in models:
        last = compute_calibrated_cv(schedule, model, mc)
        per_look.append(last.cv)
    return CriticalValueResult(
        cv=per_look[-1], attained_alpha=last.attained_alpha, per_look=tuple(per_look)
    )


def llr_sequence(schedule: LookSchedule, cumulative_observed: Sequence[float]) -> list[float]:
    """LLR at each look for cumulative observed counts against the schedule.

    For the binomial model the trial totals are the schedule's rounded
    cumulative expected counts and the observed values are cumulative exposed
    counts.
    """
    observed = list(cumulative_observed)
    if len(observed) > schedule.n_looks:
        raise ValueError("more observations than scheduled looks")
    if any(o < 0 for o in observed):
        raise ValueError("cumulative counts must be nonnegative")
    if any(b < a for a, b in zip(observed, observed[1:])):
        raise ValueError("cumulative counts must be nondecreasing")
    if schedule.model == "poisson":
        exp_cum = schedule.cumulative_expected()
        return [poisson_llr(o, exp_cum[t]) for t, o in enumerate(observed)]
    if any(o != int(o) for o in observed):
        raise ValueError("binomial counts must be integers")
    trials_cum = np.cumsum(schedule.binomial_trials())
    p = schedule.exposure_proportion
    return [binomial_llr(int(o), int(trials_cum[t]), p) for t, o in enumerate(observed)]
