import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dasleak.detect import ProbabilityMap
from dasleak.hydraulics import (LeakLevel, LeakSpec, PipeSpec,
                                classify_leak_level, orifice_flow,
                                reynolds_leak, reynolds_pipe)
from dasleak.quantify import (RangeModel, fit_range_model,
                              mean_affected_range, quantify,
                              quantify_from_map, truth_table)
from dasleak.simulate import implied_gauge_pressure


class TestRangeModelFit:
    def test_exact_line_is_recovered(self):
        pairs = [(1.5 * r + 0.4, r) for r in (0.5, 1.0, 2.0, 4.0, 8.0)]
        model = fit_range_model(pairs, case_ids=("a", "b", "c", "d", "e"))
        assert model.slope == pytest.approx(1.5, rel=1e-12)
        assert model.intercept == pytest.approx(0.4, rel=1e-12)
        assert model.r_squared == pytest.approx(1.0)
        assert model.fit_case_ids == ("a", "b", "c", "d", "e")

    def test_r_squared_penalizes_scatter(self):
        pairs = [(1.0, 1.0), (5.0, 2.0), (2.0, 3.0), (8.0, 4.0)]
        model = fit_range_model(pairs)
        assert 0.0 <= model.r_squared < 0.9

    def test_needs_two_distinct_ratios(self):
        with pytest.raises(ValueError):
            fit_range_model([(1.0, 2.0)])
        with pytest.raises(ValueError):
            fit_range_model([(1.0, 2.0), (3.0, 2.0)])

    def test_roundtrip_dict(self):
        model = RangeModel(slope=1.5, intercept=0.4, r_squared=0.993,
                           fit_case_ids=("x",))
        assert RangeModel.from_dict(model.to_dict()) == model


class TestInversion:
    def test_noiseless_inversion_recovers_diameter(self, pipe):
        # Generate a leak exactly on the fitted line and invert it.
        model = RangeModel(slope=1.55, intercept=-0.2, r_squared=1.0)
        d_true = 3.1e-3
        q_pipe = 1.8e-3
        q_leak = 0.21e-3
        gauge = implied_gauge_pressure(q_leak, d_true, pipe)
        ratio = (reynolds_leak(pipe, q_leak, d_true)
                 / reynolds_pipe(pipe, q_pipe))
        range_m = model.slope * ratio + model.intercept
        result = quantify(range_m, model, pipe, q_pipe, gauge)
        assert result.estimated_orifice_diameter == pytest.approx(
            d_true, rel=1e-6)
        assert result.estimated_leak_flow == pytest.approx(q_leak, rel=1e-6)
        assert result.estimated_leak_ratio == pytest.approx(
            q_leak / q_pipe, rel=1e-6)

    def test_inversion_chain_is_dimensionally_closed(self, pipe):
        # d = Re_leak * nu / v_jet, spelled out independently.
        model = RangeModel(slope=2.0, intercept=0.0, r_squared=1.0)
        result = quantify(4.0, model, pipe, 1.8e-3, 200e3)
        re_leak = 2.0 * reynolds_pipe(pipe, 1.8e-3)
        v = 0.61 * math.sqrt(2 * 200e3 / pipe.water_density)
        assert result.estimated_orifice_diameter == pytest.approx(
            re_leak * pipe.kinematic_viscosity / v, rel=1e-12)

    def test_subintercept_range_clamps_to_no_leak(self, pipe):
        model = RangeModel(slope=1.5, intercept=0.5, r_squared=1.0)
        result = quantify(0.2, model, pipe, 1.8e-3, 200e3)
        assert result.estimated_re_ratio == 0.0
        assert result.estimated_orifice_diameter == 0.0
        assert result.level is LeakLevel.NO_LEAK

    def test_level_matches_estimated_ratio(self, pipe):
        model = RangeModel(slope=1.5, intercept=0.0, r_squared=1.0)
        for range_m in (0.5, 2.0, 5.0, 12.0):
            result = quantify(range_m, model, pipe, 0.427e-3, 150e3)
            assert result.level is classify_leak_level(
                result.estimated_leak_ratio)

    @given(st.floats(min_value=0.0, max_value=20.0),
           st.floats(min_value=0.0, max_value=20.0))
    @settings(max_examples=30)
    def test_wider_range_never_lowers_the_level(self, pipe, r1, r2):
        order = [LeakLevel.NO_LEAK, LeakLevel.SMALL, LeakLevel.SIGNIFICANT,
                 LeakLevel.EXCESSIVE]
        model = RangeModel(slope=1.5, intercept=0.0, r_squared=1.0)
        lo, hi = sorted((r1, r2))
        la = quantify(lo, model, pipe, 1.8e-3, 200e3).level
        lb = quantify(hi, model, pipe, 1.8e-3, 200e3).level
        assert order.index(la) <= order.index(lb)

    def test_estimates_never_negative(self, pipe):
        model = RangeModel(slope=1.5, intercept=3.0, r_squared=1.0)
        result = quantify(0.0, model, pipe, 1.8e-3, 200e3)
        assert result.estimated_re_ratio >= 0
        assert result.estimated_orifice_diameter >= 0
        assert result.estimated_leak_flow >= 0

    def test_rejects_nonpositive_slope(self, pipe):
        model = RangeModel(slope=-1.0, intercept=0.0, r_squared=0.5)
        with pytest.raises(ValueError):
            quantify(1.0, model, pipe, 1.8e-3, 200e3)

    def test_implied_pressure_closes_orifice_equation(self, pipe):
        q_leak, d = 0.084e-3, 2.15e-3
        gauge = implied_gauge_pressure(q_leak, d, pipe)
        leak = LeakSpec(orifice_diameter=d, position=8.0,
                        gauge_pressure=gauge)
        assert orifice_flow(leak, pipe) == pytest.approx(q_leak, rel=1e-12)


class TestQuantifyFromMap:
    def test_uses_mean_affected_range(self, pipe):
        values = np.zeros((6, 10))
        values[:, 3:6] = 0.95
        pmap = ProbabilityMap(values=values, channel_spacing=0.8)
        model = RangeModel(slope=1.5, intercept=0.0, r_squared=1.0)
        direct = quantify(mean_affected_range(pmap), model, pipe,
                          1.8e-3, 200e3)
        via_map = quantify_from_map(pmap, model, pipe, 1.8e-3, 200e3)
        assert via_map == direct


class TestTruthTable:
    def test_reference_confusion_matrix(self):
        rows = {
            LeakLevel.SMALL: (12, 2, 0),
            LeakLevel.SIGNIFICANT: (1, 19, 1),
            LeakLevel.EXCESSIVE: (1, 3, 24),
        }
        levels = (LeakLevel.SMALL, LeakLevel.SIGNIFICANT,
                  LeakLevel.EXCESSIVE)
        preds = []
        for true_level, counts in rows.items():
            for pred_level, n in zip(levels, counts):
                preds.extend([(true_level, pred_level)] * n)
        table = truth_table(preds)
        assert table["counts"] == [[12, 2, 0], [1, 19, 1], [1, 3, 24]]
        acc = table["per_class_accuracy"]
        assert acc["small"] == pytest.approx(0.8571, abs=1e-4)
        assert acc["significant"] == pytest.approx(0.9048, abs=1e-4)
        assert acc["excessive"] == pytest.approx(0.8571, abs=1e-4)
        assert table["overall_accuracy"] == pytest.approx(55 / 63)

    def test_empty_rows_are_none(self):
        table = truth_table([(LeakLevel.SMALL, LeakLevel.SMALL)])
        assert table["per_class_accuracy"]["excessive"] is None

    def test_rejects_out_of_scale_levels(self):
        with pytest.raises(ValueError):
            truth_table([(LeakLevel.NO_LEAK, LeakLevel.SMALL)])
        with pytest.raises(ValueError):
            truth_table([(LeakLevel.SMALL, LeakLevel.NO_LEAK)])
        with pytest.raises(ValueError):
            truth_table([])
