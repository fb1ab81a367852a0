"""Sequential surveillance over accruing looks for a set of outcomes.

At every look the runner rebuilds per-outcome likelihood profiles from the
cumulative counts, refits the systematic-error distribution on the
informative negative controls, and evaluates four analysis modes per
outcome: p-value at nominal alpha versus MaxSPRT, each with or without
calibration. Negative controls themselves are scored with leave-one-out
error models so no control calibrates itself (the real-data protocol);
simulation studies disable that and fit on all controls.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .calibration import calibrated_p, uncalibrated_p
from .errormodel import ErrorModel, FitError, fit_error_model, leave_one_out_models
from .likelihood import (
    BinomialCounts,
    CountData,
    PoissonCounts,
    UninformativeProfileError,
    binomial_llr,
    mle_and_se,
    poisson_llr,
    profile_from_counts,
)
from .maxsprt import (
    CriticalValueResult,
    LookSchedule,
    MonteCarloConfig,
    compute_calibrated_cv,
    compute_cv,
)

__all__ = [
    "ALL_MODES",
    "LookObservation",
    "LookRecord",
    "OutcomeResult",
    "ProtocolError",
    "SurveillanceResult",
    "run_surveillance",
    "type1_report",
]

# analysis modes: per-look p-value at nominal alpha vs. MaxSPRT threshold,
# each with or without systematic-error calibration
ALL_MODES = ("uncal_p", "uncal_maxsprt", "cal_p", "cal_maxsprt")
_CAL_MODES = ("cal_p", "cal_maxsprt")


class ProtocolError(RuntimeError):
    """Looks arrived out of order or beyond the schedule."""


@dataclass(frozen=True)
class LookObservation:
    """Cumulative counts for every observed outcome at one look (1-based index)."""

    look_index: int
    counts: Mapping[str, CountData]


@dataclass
class LookRecord:
    """Per-outcome statistics and signal states at one look.

    Fields are None where not computable (uninformative profile, outcome not
    yet observed) or not requested (mode not enabled).
    """

    look: int
    informative: bool
    beta_hat: float | None = None
    se: float | None = None
    llr: float | None = None
    p_uncalibrated: float | None = None
    p_calibrated: float | None = None
    cv: float | None = None
    cv_calibrated: float | None = None
    error_model: ErrorModel | None = None
    signals: dict[str, bool] = field(default_factory=dict)


@dataclass
class OutcomeResult:
    outcome_id: str
    is_negative_control: bool
    looks: list[LookRecord] = field(default_factory=list)
    first_signal_look: dict[str, int | None] = field(default_factory=dict)


@dataclass
class SurveillanceResult:
    outcomes: dict[str, OutcomeResult]
    modes: tuple[str, ...]
    alpha: float
    fallback_looks: list[int] = field(default_factory=list)


def _count_llr(counts: CountData) -> float:
    if isinstance(counts, PoissonCounts):
        return poisson_llr(counts.observed, counts.expected)
    return binomial_llr(counts.exposed, counts.total, counts.null_proportion)


def _check_nondecreasing(previous: CountData | None, current: CountData, outcome_id: str) -> None:
    if previous is None:
        return
    if type(previous) is not type(current):
        raise ValueError(f"outcome {outcome_id}: count model changed between looks")
    if isinstance(current, PoissonCounts):
        ok = current.observed >= previous.observed and current.expected >= previous.expected
    else:
        ok = (
            current.exposed >= previous.exposed
            and current.total >= previous.total
            and current.null_proportion == previous.null_proportion
        )
    if not ok:
        raise ValueError(f"outcome {outcome_id}: cumulative counts decreased")


def run_surveillance(
    schedule: LookSchedule,
    looks: Iterable[LookObservation],
    negative_control_ids: Iterable[str],
    mc: MonteCarloConfig,
    modes: Sequence[str] = ALL_MODES,
    *,
    leave_one_out: bool = True,
) -> SurveillanceResult:
    """Process looks in order, updating statistics and signal flags per outcome.

    Looks must arrive with consecutive indices starting at 1; an outcome
    absent from a look keeps its previous cumulative counts. Output for look
    t never depends on later looks, so truncating the stream reproduces a
    prefix of the results exactly.

    When fewer than two negative controls are informative at a look, the
    most recent successful error-model fit is reused and the look index is
    recorded in fallback_looks.
    """
    modes = tuple(modes)
    if not modes:
        raise ValueError("at least one analysis mode is required")
    unknown = set(modes) - set(ALL_MODES)
    if unknown:
        raise ValueError(f"unknown modes: {sorted(unknown)}")
    control_ids = frozenset(negative_control_ids)
    calibrate = any(m in modes for m in _CAL_MODES)
    if calibrate and not control_ids:
        raise ValueError("calibrated modes require negative control ids")

    uncal_cv = compute_cv(schedule, mc).cv if "uncal_maxsprt" in modes else None
    cal_cv_cache: dict[tuple[float, float], float] = {}

    def cal_cv(model: ErrorModel) -> float:
        key = (model.mean, model.sd)
        if key not in cal_cv_cache:
            cal_cv_cache[key] = compute_calibrated_cv(schedule, model, mc).cv
        return cal_cv_cache[key]

    outcomes: dict[str, OutcomeResult] = {}
    current_counts: dict[str, CountData] = {}
    last_full_model: ErrorModel | None = None
    fallback_looks: list[int] = []
    next_look = 1

    for obs in looks:
        if obs.look_index != next_look:
            raise ProtocolError(f"expected look {next_look}, got {obs.look_index}")
        if obs.look_index > schedule.n_looks:
            raise ProtocolError(f"look {obs.look_index} beyond the {schedule.n_looks}-look schedule")
        next_look += 1
        t = obs.look_index

        for outcome_id, counts in obs.counts.items():
            _check_nondecreasing(current_counts.get(outcome_id), counts, outcome_id)
            current_counts[outcome_id] = counts

        profiles: dict[str, object] = {}
        for outcome_id in sorted(current_counts):
            try:
                profiles[outcome_id] = profile_from_counts(
                    current_counts[outcome_id], outcome_id=outcome_id
                )
            except UninformativeProfileError:
                pass

        full_model: ErrorModel | None = None
        control_models: dict[str, ErrorModel] = {}
        if calibrate:
            informative_controls = sorted(c for c in control_ids if c in profiles)
            control_profiles = [profiles[c] for c in informative_controls]
            if len(control_profiles) >= 2:
                try:
                    full_model = fit_error_model(control_profiles)
                except FitError:
                    full_model = None
            if full_model is None:
                if last_full_model is None:
                    raise FitError(f"no systematic-error model available at look {t}")
                full_model = last_full_model
                fallback_looks.append(t)
            else:
                last_full_model = full_model
                if leave_one_out and len(control_profiles) >= 3:
                    loo = leave_one_out_models(control_profiles)
                    control_models = {
                        cid: (m if m is not None else full_model)
                        for cid, m in zip(informative_controls, loo)
                    }

        for outcome_id in sorted(current_counts):
            result = outcomes.get(outcome_id)
            if result is None:
                result = OutcomeResult(
                    outcome_id,
                    outcome_id in control_ids,
                    first_signal_look={m: None for m in modes},
                )
                # pad looks from before the outcome was first observed
                result.looks = [
                    LookRecord(look=k, informative=False, signals={m: False for m in modes})
                    for k in range(1, t)
                ]
                outcomes[outcome_id] = result

            counts = current_counts[outcome_id]
            llr = _count_llr(counts)
            profile = profiles.get(outcome_id)
            informative = profile is not None
            model = control_models.get(outcome_id, full_model) if calibrate else None

            beta_hat = se = p_unc = p_cal = None
            if informative:
                beta_hat, se = mle_and_se(profile)
                p_unc = uncalibrated_p(beta_hat, se)
                if calibrate:
                    p_cal = calibrated_p(beta_hat, se, model)
            cv_cal = cal_cv(model) if "cal_maxsprt" in modes else None

            signals: dict[str, bool] = {}
            for mode in modes:
                if mode == "uncal_maxsprt":
                    fired = llr > uncal_cv
                elif mode == "cal_maxsprt":
                    fired = llr > cv_cal
                elif mode == "uncal_p":
                    fired = p_unc is not None and p_unc < schedule.alpha
                else:
                    fired = p_cal is not None and p_cal < schedule.alpha
                signals[mode] = fired
                if fired and result.first_signal_look[mode] is None:
                    result.first_signal_look[mode] = t
            result.looks.append(
                LookRecord(
                    look=t,
                    informative=informative,
                    beta_hat=beta_hat,
                    se=se,
                    llr=llr,
                    p_uncalibrated=p_unc,
                    p_calibrated=p_cal,
                    cv=uncal_cv,
                    cv_calibrated=cv_cal,
                    error_model=model,
                    signals=signals,
                )
            )

    return SurveillanceResult(
        outcomes=outcomes, modes=modes, alpha=schedule.alpha, fallback_looks=fallback_looks
    )


def type1_report(result: SurveillanceResult) -> dict[str, float]:
    """Fraction of negative controls that ever signaled, per analysis mode.

    Controls that never produced an informative look are excluded from the
    denominator.
    """
    controls = [
        o
        for o in result.outcomes.values()
        if o.is_negative_control and any(r.informative for r in o.looks)
    ]
    if not controls:
        raise ValueError("no informative negative controls in the results")
    return {
        mode: sum(1 for o in controls if o.first_signal_look.get(mode) is not None) / len(controls)
        for mode in result.modes
    }
