import copy

import numpy as np
import pytest

import seqcalib.surveillance as surveillance_module
from seqcalib.errormodel import ErrorModel, FitError
from seqcalib.likelihood import BinomialCounts, PoissonCounts
from seqcalib.maxsprt import LookSchedule, MonteCarloConfig
from seqcalib.surveillance import (
    ALL_MODES,
    LookObservation,
    ProtocolError,
    run_surveillance,
    type1_report,
)

MC = MonteCarloConfig(2_000, base_seed=77)


def poisson_schedule(n_looks=3, e=5.0, alpha=0.05):
    return LookSchedule((e,) * n_looks, alpha=alpha)


def poisson_looks(counts_by_outcome, e=5.0):
    """counts_by_outcome: {id: [cumulative observed per look]}."""
    n_looks = len(next(iter(counts_by_outcome.values())))
    looks = []
    for t in range(n_looks):
        counts = {
            oid: PoissonCounts(series[t], e * (t + 1))
            for oid, series in counts_by_outcome.items()
        }
        looks.append(LookObservation(t + 1, counts))
    return looks


def null_control_series(n_controls, n_looks, e=5.0, seed=0):
    rng = np.random.default_rng(seed)
    out = {}
    for i in range(n_controls):
        increments = rng.poisson(e, size=n_looks)
        out[f"nc-{i:02d}"] = list(np.cumsum(increments))
    return out


class TestRunSurveillance:
    def test_counts_at_expectation_never_signal(self):
        series = {"a": [5, 10, 15], **null_control_series(4, 3, seed=1)}
        result = run_surveillance(
            poisson_schedule(), poisson_looks(series), [k for k in series if k != "a"], MC
        )
        outcome = result.outcomes["a"]
        assert all(v is None for v in outcome.first_signal_look.values())
        assert all(rec.llr == 0.0 for rec in outcome.looks)

    def test_zero_llr_outcomes_never_signal_maxsprt(self):
        series = {"low": [1, 3, 6], **null_control_series(4, 3, seed=2)}
        result = run_surveillance(
            poisson_schedule(), poisson_looks(series), [k for k in series if k != "low"], MC
        )
        outcome = result.outcomes["low"]
        assert outcome.first_signal_look["uncal_maxsprt"] is None
        assert outcome.first_signal_look["cal_maxsprt"] is None

    def test_unadjusted_per_look_p_inflates_over_looks(self):
        # many looks at independent null data: per-look testing at nominal
        # alpha signals far more than alpha overall
        n_looks, n_outcomes, e = 10, 300, 20.0
        rng = np.random.default_rng(5)
        series = {
            f"o-{i:03d}": list(np.cumsum(rng.poisson(e, size=n_looks)))
            for i in range(n_outcomes)
        }
        schedule = poisson_schedule(n_looks=n_looks, e=e)
        looks = poisson_looks(series, e=e)
        result = run_surveillance(schedule, looks, [], MC, modes=("uncal_p", "uncal_maxsprt"))
        fraction_p = np.mean(
            [result.outcomes[o].first_signal_look["uncal_p"] is not None for o in series]
        )
        fraction_maxsprt = np.mean(
            [result.outcomes[o].first_signal_look["uncal_maxsprt"] is not None for o in series]
        )
        assert fraction_p > 0.05
        assert fraction_maxsprt <= fraction_p

    def test_null_error_model_matches_uncalibrated_signals(self, monkeypatch):
        series = null_control_series(8, 3, seed=3)
        series["hot"] = [9, 16, 22]
        controls = [k for k in series if k != "hot"]
        monkeypatch.setattr(
            surveillance_module, "fit_error_model", lambda profiles: ErrorModel(0.0, 0.0)
        )
        result = run_surveillance(
            poisson_schedule(), poisson_looks(series), controls, MC, leave_one_out=False
        )
        for outcome in result.outcomes.values():
            assert outcome.first_signal_look["cal_p"] == outcome.first_signal_look["uncal_p"]
            assert (
                outcome.first_signal_look["cal_maxsprt"]
                == outcome.first_signal_look["uncal_maxsprt"]
            )
            for rec in outcome.looks:
                assert rec.cv_calibrated == rec.cv

    def test_leave_one_out_excludes_own_profile(self):
        series = null_control_series(6, 2, seed=4)
        result = run_surveillance(
            poisson_schedule(n_looks=2), poisson_looks(series), list(series), MC
        )
        for outcome in result.outcomes.values():
            for rec in outcome.looks:
                if rec.informative and rec.error_model is not None:
                    assert rec.error_model.n_controls == len(series) - 1

    def test_full_fit_used_without_leave_one_out(self):
        series = null_control_series(6, 2, seed=4)
        result = run_surveillance(
            poisson_schedule(n_looks=2),
            poisson_looks(series),
            list(series),
            MC,
            leave_one_out=False,
        )
        for outcome in result.outcomes.values():
            for rec in outcome.looks:
                if rec.informative:
                    assert rec.error_model.n_controls == len(series)

    def test_incremental_prefix_identical(self):
        series = {"a": [6, 13, 21], **null_control_series(5, 3, seed=6)}
        looks = poisson_looks(series)
        controls = [k for k in series if k != "a"]
        full = run_surveillance(poisson_schedule(), looks, controls, MC)
        truncated = run_surveillance(poisson_schedule(), copy.deepcopy(looks[:2]), controls, MC)
        for oid, outcome in truncated.outcomes.items():
            assert outcome.looks == full.outcomes[oid].looks[:2]

    def test_out_of_order_look_rejected(self):
        series = null_control_series(3, 2, seed=7)
        looks = poisson_looks(series)
        with pytest.raises(ProtocolError):
            run_surveillance(poisson_schedule(n_looks=2), looks[::-1], list(series), MC)

    def test_look_beyond_schedule_rejected(self):
        series = null_control_series(3, 3, seed=8)
        with pytest.raises(ProtocolError):
            run_surveillance(poisson_schedule(n_looks=2), poisson_looks(series), list(series), MC)

    def test_calibrated_mode_requires_controls(self):
        series = {"a": [5, 10]}
        with pytest.raises(ValueError):
            run_surveillance(poisson_schedule(n_looks=2), poisson_looks(series), [], MC)

    def test_uncalibrated_modes_run_without_controls(self):
        series = {"a": [5, 10]}
        result = run_surveillance(
            poisson_schedule(n_looks=2),
            poisson_looks(series),
            [],
            MC,
            modes=("uncal_p", "uncal_maxsprt"),
        )
        assert set(result.outcomes) == {"a"}

    def test_unknown_mode_rejected(self):
        series = {"a": [5, 10]}
        with pytest.raises(ValueError):
            run_surveillance(
                poisson_schedule(n_looks=2), poisson_looks(series), [], MC, modes=("bogus",)
            )

    def test_no_error_model_available_at_first_look(self):
        # single informative control cannot support a fit and nothing to fall back on
        series = {"nc-0": [5, 10], "a": [5, 10]}
        with pytest.raises(FitError):
            run_surveillance(poisson_schedule(n_looks=2), poisson_looks(series), ["nc-0"], MC)

    def test_fallback_to_previous_fit_and_flagged(self):
        # binomial controls informative at look 1; at look 2 one hits
        # exposed == total and the informative set drops below 2
        schedule = LookSchedule(
            (4.0, 4.0), alpha=0.05, model="binomial", exposure_proportion=0.5
        )
        looks = [
            LookObservation(
                1,
                {
                    "nc-0": BinomialCounts(2, 4, 0.5),
                    "nc-1": BinomialCounts(3, 4, 0.5),
                    "x": BinomialCounts(2, 4, 0.5),
                },
            ),
            LookObservation(
                2,
                {
                    "nc-0": BinomialCounts(4, 8, 0.5),
                    "nc-1": BinomialCounts(8, 8, 0.5),
                    "x": BinomialCounts(4, 8, 0.5),
                },
            ),
        ]
        result = run_surveillance(schedule, looks, ["nc-0", "nc-1"], MC)
        assert result.fallback_looks == [2]
        look1_model = result.outcomes["x"].looks[0].error_model
        look2_model = result.outcomes["x"].looks[1].error_model
        assert look2_model == look1_model

    def test_outcome_absent_from_later_look_carries_forward(self):
        schedule = poisson_schedule(n_looks=2)
        looks = [
            LookObservation(1, {"a": PoissonCounts(7, 5.0), "nc-0": PoissonCounts(5, 5.0), "nc-1": PoissonCounts(4, 5.0)}),
            LookObservation(2, {"nc-0": PoissonCounts(9, 10.0), "nc-1": PoissonCounts(11, 10.0)}),
        ]
        result = run_surveillance(schedule, looks, ["nc-0", "nc-1"], MC, leave_one_out=False)
        records = result.outcomes["a"].looks
        assert len(records) == 2
        assert records[1].llr == records[0].llr

    def test_outcome_appearing_late_gets_padded_records(self):
        schedule = poisson_schedule(n_looks=2)
        looks = [
            LookObservation(1, {"nc-0": PoissonCounts(5, 5.0), "nc-1": PoissonCounts(4, 5.0)}),
            LookObservation(
                2,
                {
                    "late": PoissonCounts(3, 10.0),
                    "nc-0": PoissonCounts(9, 10.0),
                    "nc-1": PoissonCounts(11, 10.0),
                },
            ),
        ]
        result = run_surveillance(schedule, looks, ["nc-0", "nc-1"], MC, leave_one_out=False)
        records = result.outcomes["late"].looks
        assert len(records) == 2
        assert records[0].informative is False and records[0].llr is None

    def test_decreasing_counts_rejected(self):
        schedule = poisson_schedule(n_looks=2)
        looks = [
            LookObservation(1, {"a": PoissonCounts(5, 5.0)}),
            LookObservation(2, {"a": PoissonCounts(4, 10.0)}),
        ]
        with pytest.raises(ValueError):
            run_surveillance(schedule, looks, [], MC, modes=("uncal_p",))


class TestType1Report:
    def test_counts_signaling_fraction(self):
        series = null_control_series(3, 2, seed=9)
        result = run_surveillance(
            poisson_schedule(n_looks=2), poisson_looks(series), list(series), MC
        )
        # rewrite the signal bookkeeping to a known configuration
        ids = sorted(series)
        for oid in ids:
            result.outcomes[oid].first_signal_look = {m: None for m in ALL_MODES}
        result.outcomes[ids[0]].first_signal_look["uncal_p"] = 2
        report = type1_report(result)
        assert report["uncal_p"] == pytest.approx(1 / 3)
        assert report["cal_maxsprt"] == 0.0

    def test_requires_informative_controls(self):
        series = {"a": [5, 10]}
        result = run_surveillance(
            poisson_schedule(n_looks=2),
            poisson_looks(series),
            [],
            MC,
            modes=("uncal_p",),
        )
        with pytest.raises(ValueError):
            type1_report(result)
