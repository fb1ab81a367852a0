import math

import numpy as np
import pytest
from scipy import stats

from seqcalib.errormodel import ErrorModel
from seqcalib.likelihood import binomial_llr, poisson_llr
from seqcalib.maxsprt import (
    CriticalValueResult,
    LookSchedule,
    MonteCarloConfig,
    _llr_max_samples,
    compute_calibrated_cv,
    compute_cv,
    dynamic_cv,
    llr_sequence,
)


def poisson_one_look_oracle_cv(expected, alpha):
    """Exact tail enumeration: smallest LLR value whose exceedance prob <= alpha."""
    o = 0
    while stats.poisson.sf(o, expected) > alpha:
        o += 1
    return poisson_llr(o, expected), float(stats.poisson.sf(o, expected))


def binomial_one_look_oracle_cv(total, p, alpha):
    o = 0
    while stats.binom.sf(o, total, p) > alpha:
        o += 1
    return binomial_llr(o, total, p), float(stats.binom.sf(o, total, p))


class TestComputeCv:
    def test_one_look_poisson_matches_exact_oracle(self):
        schedule = LookSchedule((4.0,), alpha=0.05)
        result = compute_cv(schedule, MonteCarloConfig(200_000, base_seed=11))
        oracle_cv, oracle_alpha = poisson_one_look_oracle_cv(4.0, 0.05)
        assert oracle_cv == poisson_llr(8, 4)  # signaling region is o >= 9
        assert result.cv == oracle_cv
        assert result.attained_alpha == pytest.approx(oracle_alpha, abs=0.003)

    def test_one_look_binomial_matches_enumeration(self):
        schedule = LookSchedule((20.0,), alpha=0.05, model="binomial", exposure_proportion=0.5)
        result = compute_cv(schedule, MonteCarloConfig(200_000, base_seed=12))
        oracle_cv, _ = binomial_one_look_oracle_cv(20, 0.5, 0.05)
        assert result.cv == oracle_cv

    def test_alpha_one_gives_zero_cv(self):
        schedule = LookSchedule((4.0,), alpha=1.0)
        result = compute_cv(schedule, MonteCarloConfig(10_000, base_seed=1))
        assert result.cv == 0.0

    def test_cv_monotone_nonincreasing_in_alpha(self):
        cvs = []
        for alpha in (0.01, 0.05, 0.1, 0.25, 0.5):
            schedule = LookSchedule((4.0, 4.0, 4.0), alpha=alpha)
            cvs.append(compute_cv(schedule, MonteCarloConfig(50_000, base_seed=5)).cv)
        assert all(b <= a for a, b in zip(cvs, cvs[1:]))

    def test_cv_nondecreasing_in_looks(self):
        # nested schedules share count draws, so the order statistics dominate
        cvs = []
        for t in (1, 2, 4):
            schedule = LookSchedule((4.0,) * t, alpha=0.05)
            cvs.append(compute_cv(schedule, MonteCarloConfig(100_000, base_seed=42)).cv)
        assert cvs[0] <= cvs[1] <= cvs[2]

    def test_attained_alpha_at_most_alpha(self):
        for seed in range(3):
            schedule = LookSchedule((2.0, 3.0, 5.0), alpha=0.05)
            result = compute_cv(schedule, MonteCarloConfig(20_000, base_seed=seed))
            assert result.attained_alpha <= 0.05

    def test_null_signaling_rate_on_independent_seed(self):
        schedule = LookSchedule((3.0, 3.0, 3.0), alpha=0.05)
        result = compute_cv(schedule, MonteCarloConfig(100_000, base_seed=21))
        fresh = _llr_max_samples(schedule, MonteCarloConfig(50_000, base_seed=2099), None)
        rate = float(np.mean(fresh > result.cv))
        assert rate <= 0.05
        assert rate >= result.attained_alpha - 3 * math.sqrt(0.05 / 50_000)

    def test_deterministic(self):
        schedule = LookSchedule((4.0, 4.0), alpha=0.05)
        a = compute_cv(schedule, MonteCarloConfig(30_000, base_seed=9))
        b = compute_cv(schedule, MonteCarloConfig(30_000, base_seed=9))
        assert a == b

    def test_determinism_across_batch_boundaries(self):
        # replicate count spanning multiple batches still reproduces exactly
        schedule = LookSchedule((4.0,), alpha=0.05)
        a = compute_cv(schedule, MonteCarloConfig(70_000, base_seed=3))
        b = compute_cv(schedule, MonteCarloConfig(70_000, base_seed=3))
        assert a == b

    def test_too_few_replicates_rejected(self):
        schedule = LookSchedule((4.0,), alpha=0.05)
        with pytest.raises(ValueError):
            compute_cv(schedule, MonteCarloConfig(999, base_seed=1))

    def test_low_replicates_warn(self):
        schedule = LookSchedule((4.0,), alpha=0.05)
        with pytest.warns(UserWarning):
            compute_cv(schedule, MonteCarloConfig(5_000, base_seed=1))


class TestComputeCalibratedCv:
    def test_null_model_reproduces_uncalibrated_exactly(self):
        for kwargs in (
            {"model": "poisson"},
            {"model": "binomial", "exposure_proportion": 0.3},
        ):
            schedule = LookSchedule((8.0, 8.0, 8.0), alpha=0.05, **kwargs)
            mc = MonteCarloConfig(50_000, base_seed=17)
            plain = compute_cv(schedule, mc)
            calibrated = compute_calibrated_cv(schedule, ErrorModel(0.0, 0.0), mc)
            assert calibrated.cv == plain.cv
            assert calibrated.attained_alpha == plain.attained_alpha

    def test_one_look_fixed_bias_matches_tilted_oracle(self):
        # bias (0.2, 0): null counts ~ Poisson(10 e^0.2), LLR against expected 10
        schedule = LookSchedule((10.0,), alpha=0.05)
        mc = MonteCarloConfig(200_000, base_seed=23)
        result = compute_calibrated_cv(schedule, ErrorModel(0.2, 0.0), mc)
        rate = 10.0 * math.exp(0.2)
        o = 0
        while stats.poisson.sf(o, rate) > 0.05:
            o += 1
        assert result.cv == poisson_llr(o, 10.0)

    def test_bias_widens_null_and_raises_cv(self):
        schedule = LookSchedule((10.0,) * 5, alpha=0.05)
        mc = MonteCarloConfig(50_000, base_seed=31)
        plain = compute_cv(schedule, mc).cv
        biased = compute_calibrated_cv(schedule, ErrorModel(0.0, 0.3), mc).cv
        assert biased > plain

    def test_model_count_validation(self):
        schedule = LookSchedule((4.0, 4.0, 4.0), alpha=0.05)
        mc = MonteCarloConfig(2_000, base_seed=1)
        with pytest.raises(ValueError):
            compute_calibrated_cv(schedule, [ErrorModel(0, 0), ErrorModel(0, 0)], mc)

    def test_single_model_broadcasts(self):
        schedule = LookSchedule((4.0, 4.0), alpha=0.05)
        mc = MonteCarloConfig(20_000, base_seed=2)
        one = compute_calibrated_cv(schedule, ErrorModel(0.1, 0.1), mc)
        listed = compute_calibrated_cv(schedule, [ErrorModel(0.1, 0.1)], mc)
        both = compute_calibrated_cv(schedule, [ErrorModel(0.1, 0.1)] * 2, mc)
        assert one == listed == both


class TestDynamicCv:
    def test_per_look_values(self):
        schedule = LookSchedule((5.0, 5.0, 5.0), alpha=0.05)
        mc = MonteCarloConfig(20_000, base_seed=3)
        models = [ErrorModel(0.0, 0.3), ErrorModel(0.0, 0.2), ErrorModel(0.0, 0.1)]
        result = dynamic_cv(schedule, models, mc)
        assert len(result.per_look) == 3
        for cv_t, model in zip(result.per_look, models):
            assert cv_t == compute_calibrated_cv(schedule, model, mc).cv
        assert result.cv == result.per_look[-1]

    def test_requires_one_model_per_look(self):
        schedule = LookSchedule((5.0, 5.0), alpha=0.05)
        with pytest.raises(ValueError):
            dynamic_cv(schedule, [ErrorModel(0, 0)], MonteCarloConfig(2_000))


class TestLlrSequence:
    def test_counts_at_expectation_give_zeros(self):
        schedule = LookSchedule((5.0, 5.0), alpha=0.05)
        assert llr_sequence(schedule, [5, 10]) == [0.0, 0.0]

    def test_below_then_at_expectation(self):
        schedule = LookSchedule((5.0, 5.0), alpha=0.05)
        assert llr_sequence(schedule, [3, 10]) == [0.0, 0.0]

    def test_doubled_counts_closed_form(self):
        schedule = LookSchedule((5.0, 5.0), alpha=0.05)
        values = llr_sequence(schedule, [6, 20])
        assert values[1] == pytest.approx(20 * math.log(2.0) + 10 - 20, abs=1e-9)
        assert values[1] == pytest.approx(3.8629, abs=1e-4)

    def test_binomial_uses_rounded_trials(self):
        schedule = LookSchedule((10.2, 10.2), alpha=0.05, model="binomial", exposure_proportion=0.5)
        values = llr_sequence(schedule, [8, 15])
        assert values[0] == binomial_llr(8, 10, 0.5)
        assert values[1] == binomial_llr(15, 20, 0.5)

    def test_rejects_decreasing_counts(self):
        schedule = LookSchedule((5.0, 5.0), alpha=0.05)
        with pytest.raises(ValueError):
            llr_sequence(schedule, [5, 4])

    def test_rejects_too_many_observations(self):
        schedule = LookSchedule((5.0,), alpha=0.05)
        with pytest.raises(ValueError):
            llr_sequence(schedule, [5, 6])

    def test_binomial_rejects_fractional_counts(self):
        schedule = LookSchedule((10.0,), alpha=0.05, model="binomial", exposure_proportion=0.5)
        with pytest.raises(ValueError):
            llr_sequence(schedule, [7.5])


class TestScheduleValidation:
    def test_empty_schedule_rejected(self):
        with pytest.raises(ValueError):
            LookSchedule((), alpha=0.05)

    def test_nonpositive_increment_rejected(self):
        with pytest.raises(ValueError):
            LookSchedule((4.0, 0.0), alpha=0.05)

    def test_binomial_requires_proportion(self):
        with pytest.raises(ValueError):
            LookSchedule((4.0,), alpha=0.05, model="binomial")

    def test_poisson_rejects_proportion(self):
        with pytest.raises(ValueError):
            LookSchedule((4.0,), alpha=0.05, exposure_proportion=0.5)

    def test_trials_rounded_to_nearest_positive_integer(self):
        schedule = LookSchedule((15.7, 0.4), alpha=0.05, model="binomial", exposure_proportion=0.5)
        assert list(schedule.binomial_trials()) == [16, 1]

    def test_result_invariant(self):
        result = CriticalValueResult(cv=1.0, attained_alpha=0.03)
        assert result.per_look is None
