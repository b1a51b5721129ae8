import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dasleak import detect
from dasleak.detect import (LeakFinding, ProbabilityMap, assemble_map,
                            cube_rates, find_leak, median_profile,
                            read_map_csv, window_affected_ranges,
                            write_map_csv)


def _map_from_grid(grid, spacing=0.8):
    return ProbabilityMap(values=np.asarray(grid, dtype=float),
                          channel_spacing=spacing)


class TestAssembleMap:
    def test_basic_assembly(self):
        triples = [(w, c, 0.1 * w + 0.01 * c)
                   for w in range(3) for c in range(2, 5)]
        pmap = assemble_map(triples, n_channels=6, channel_spacing=0.8)
        assert pmap.values.shape == (3, 6)
        assert np.isnan(pmap.values[:, 0]).all()
        assert np.isnan(pmap.values[:, 5]).all()
        assert pmap.values[2, 4] == pytest.approx(0.24)
        np.testing.assert_array_equal(pmap.scored_channels(), [2, 3, 4])

    @given(st.randoms(use_true_random=False))
    @settings(max_examples=20)
    def test_order_invariance(self, random):
        triples = [(w, c, (w * 7 + c) / 100)
                   for w in range(4) for c in range(3)]
        shuffled = triples[:]
        random.shuffle(shuffled)
        a = assemble_map(triples, 5, 0.8)
        b = assemble_map(shuffled, 5, 0.8)
        np.testing.assert_array_equal(a.values, b.values)

    def test_incomplete_grid_rejected(self):
        triples = [(0, 0, 0.5), (0, 1, 0.5), (1, 0, 0.5)]
        with pytest.raises(ValueError):
            assemble_map(triples, 3, 0.8)

    def test_gap_in_windows_rejected(self):
        triples = [(0, 0, 0.5), (2, 0, 0.5)]
        with pytest.raises(ValueError):
            assemble_map(triples, 2, 0.8)

    def test_conflicting_duplicate_rejected(self):
        triples = [(0, 0, 0.5), (0, 0, 0.6)]
        with pytest.raises(ValueError):
            assemble_map(triples, 2, 0.8)

    def test_probability_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            assemble_map([(0, 0, 1.5)], 2, 0.8)


class TestMedianProfile:
    def test_low_median_even_count(self):
        pmap = _map_from_grid([[0.1], [0.2], [0.3], [0.4]])
        prof = median_profile(pmap, horizon_seconds=20.0)
        # Even count: the lower-middle order statistic, deterministically.
        assert prof.values[0] == pytest.approx(0.2)

    def test_horizon_selects_recent_windows(self):
        pmap = _map_from_grid([[0.9]] * 10 + [[0.1]] * 3)
        prof = median_profile(pmap, horizon_seconds=15.0)
        assert prof.values[0] == pytest.approx(0.1)
        assert not prof.clamped

    def test_clamping(self):
        pmap = _map_from_grid([[0.5]] * 4)
        prof = median_profile(pmap, horizon_seconds=210.0)
        assert prof.clamped

    def test_rejects_subwindow_horizon(self):
        pmap = _map_from_grid([[0.5]])
        with pytest.raises(ValueError):
            median_profile(pmap, horizon_seconds=1.0)

    @given(st.integers(min_value=0, max_value=20))
    @settings(max_examples=21)
    def test_median_ignores_minority_bursts(self, n_bursts):
        # Fewer than half the windows spiking cannot move the median above
        # the baseline -- the transient-rejection mechanism in one line.
        n = 42
        column = np.full(n, 0.05)
        column[:n_bursts] = 1.0
        pmap = _map_from_grid(column[:, None])
        prof = median_profile(pmap, horizon_seconds=n * 5.0)
        assert prof.values[0] == pytest.approx(0.05)


class TestFindLeak:
    def test_no_declaration_below_threshold(self):
        prof = median_profile(_map_from_grid([[0.2, 0.3, 0.1]]), 5.0)
        finding = find_leak(prof, threshold=0.9)
        assert not finding.declared
        assert finding.center is None

    def test_widest_run_wins(self):
        row = [0.0, 0.95, 0.0, 0.92, 0.93, 0.94, 0.0]
        prof = median_profile(_map_from_grid([row]), 5.0)
        finding = find_leak(prof, threshold=0.9)
        assert finding.declared
        assert finding.center == pytest.approx(4 * 0.8)
        lo, hi = finding.affected_range
        assert lo == pytest.approx(3 * 0.8 - 0.4)
        assert hi == pytest.approx(5 * 0.8 + 0.4)

    def test_tie_broken_by_peak(self):
        row = [0.91, 0.92, 0.0, 0.99, 0.93, 0.0]
        prof = median_profile(_map_from_grid([row]), 5.0)
        finding = find_leak(prof, threshold=0.9)
        assert finding.center == pytest.approx((3 + 4) / 2 * 0.8)
        assert finding.peak_median_probability == pytest.approx(0.99)

    def test_nan_channels_break_runs(self):
        row = [0.95, np.nan, 0.95]
        prof = median_profile(_map_from_grid([row]), 5.0)
        finding = find_leak(prof, threshold=0.9)
        lo, hi = finding.affected_range
        assert hi - lo == pytest.approx(0.8)

    @given(st.floats(min_value=0.0, max_value=0.98),
           st.floats(min_value=0.0, max_value=0.98))
    @settings(max_examples=30)
    def test_threshold_monotonicity(self, t1, t2):
        # Raising the threshold can only shrink (or keep) the declared width.
        lo, hi = sorted((t1, t2))
        row = np.linspace(0.0, 0.99, 12)
        prof = median_profile(_map_from_grid([row]), 5.0)
        wide = find_leak(prof, threshold=lo)
        narrow = find_leak(prof, threshold=hi)

        def width(f):
            if not f.declared:
                return 0.0
            a, b = f.affected_range
            return b - a

        assert width(narrow) <= width(wide) + 1e-12


class TestRates:
    def test_cube_rates(self):
        probs = np.array([0.95, 0.5, 0.99, 0.2, 0.91])
        labels = np.array([1, 1, 1, 0, 0])
        tpr, far = cube_rates(probs, labels, threshold=0.9)
        assert tpr == pytest.approx(2 / 3)
        assert far == pytest.approx(1 / 2)

    def test_empty_classes_are_none(self):
        tpr, far = cube_rates(np.array([0.95]), np.array([1]))
        assert far is None and tpr == 1.0
        tpr, far = cube_rates(np.array([0.95]), np.array([0]))
        assert tpr is None and far == 1.0


class TestAffectedRanges:
    def test_per_window_widths(self):
        grid = [[0.95, 0.95, 0.95, 0.95, 0.0],
                [0.0, 0.0, 0.0, 0.0, 0.0],
                [0.95, 0.0, 0.95, 0.95, 0.0]]
        widths = window_affected_ranges(_map_from_grid(grid), threshold=0.9)
        np.testing.assert_allclose(widths, [3.2, 0.0, 1.6])

    def test_mean_affected_range_examples(self):
        from dasleak.quantify import mean_affected_range
        # Six 5-s windows cover the 30-s quantification span exactly.
        steady = _map_from_grid([[0.95, 0.95, 0.95, 0.95, 0.0]] * 6)
        assert mean_affected_range(steady) == pytest.approx(3.2)
        silent = _map_from_grid([[0.1, 0.2, 0.0, 0.3, 0.0]] * 6)
        assert mean_affected_range(silent) == 0.0
        half = _map_from_grid([[0.95] * 5] * 3 + [[0.0] * 5] * 3)
        assert mean_affected_range(half) == pytest.approx(2.0)

    def test_mean_affected_range_needs_enough_windows(self):
        from dasleak.quantify import mean_affected_range
        with pytest.raises(ValueError):
            mean_affected_range(_map_from_grid([[0.5]] * 3))


class TestCsvRoundTrip:
    def test_roundtrip(self, tmp_path, rng):
        values = rng.uniform(0, 1, size=(4, 6))
        values[:, 0] = np.nan
        pmap = ProbabilityMap(values=values, channel_spacing=0.8)
        prof = median_profile(pmap, horizon_seconds=20.0)
        path = tmp_path / "map.csv"
        write_map_csv(path, pmap, prof)
        back = read_map_csv(path)
        assert back.channel_spacing == pytest.approx(0.8)
        np.testing.assert_allclose(back.values, values, atol=1e-6,
                                   equal_nan=True)

    def test_malformed_csv_rejected(self, tmp_path):
        from dasleak.errors import DataFormatError
        path = tmp_path / "map.csv"
        path.write_text("0.0,0.8\n")
        with pytest.raises(DataFormatError):
            read_map_csv(path)
