"""Tests for detector response, tagger response, and background calibration."""

import numpy as np
import pytest

from b92sim import detection as det
from b92sim.photonics import POL_A, POL_D, POL_H, POL_V, PolarizedTagSeries
from b92sim.timetag import TimeTagSeries


def series(tags, duration=None):
    tags = np.asarray(tags, dtype=np.int64)
    if duration is None:
        duration = int(tags[-1]) + 1 if tags.size else 1
    return TimeTagSeries(tags, duration)


class TestDeadTime:
    def test_hand_trace(self):
        # 0, 20 ns, 100 ns through a 45 ns dead time: the 20 ns tag falls
        # inside the window opened at 0, the 100 ns tag is clear of it
        s = series([0, 20_000, 100_000])
        out = det.dead_time_prune(s, 45_000)
        np.testing.assert_array_equal(out.tags, [0, 100_000])

    def test_boundary_is_inclusive_survival(self):
        out = det.dead_time_prune(series([0, 44_999]), 45_000)
        np.testing.assert_array_equal(out.tags, [0])
        out = det.dead_time_prune(series([0, 45_000]), 45_000)
        np.testing.assert_array_equal(out.tags, [0, 45_000])

    def test_window_anchors_to_accepted_tag(self):
        # non-paralyzable: the dropped tag at 30 ns does not extend the window
        out = det.dead_time_prune(series([0, 30_000, 60_000]), 45_000)
        np.testing.assert_array_equal(out.tags, [0, 60_000])

    def test_zero_dead_time_is_identity(self):
        s = series([0, 1, 2, 3])
        assert det.dead_time_prune(s, 0) is s

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            det.dead_time_prune(series([0]), -1)


class TestDetect:
    def test_ideal_detector_is_identity(self):
        spec = det.DetectorSpec(quantum_efficiency=1.0, dead_time_ps=0,
                                jitter_fwhm_ps=0.0)
        s = series(np.arange(100) * 1000)
        out = det.detect(s, spec, np.random.default_rng(0))
        np.testing.assert_array_equal(out.tags, s.tags)

    def test_quantum_efficiency_thinning(self):
        n = 100_000
        spec = det.DetectorSpec(quantum_efficiency=0.7, dead_time_ps=0,
                                jitter_fwhm_ps=0.0)
        s = series(np.arange(n, dtype=np.int64) * 1000)
        out = det.detect(s, spec, np.random.default_rng(1))
        assert abs(out.count - 0.7 * n) <= 3 * np.sqrt(n * 0.21)

    def test_labels_follow_surviving_tags(self):
        n = 4000
        tags = np.arange(n, dtype=np.int64) * 1000
        pol = (np.arange(n) % 4).astype(np.int8)
        pts = PolarizedTagSeries(series(tags), pol, np.zeros(n, np.int8))
        spec = det.DetectorSpec(quantum_efficiency=0.5, dead_time_ps=0,
                                jitter_fwhm_ps=0.0)
        out = det.detect(pts, spec, np.random.default_rng(2))
        assert 0 < out.count < n
        np.testing.assert_array_equal(out.polarization,
                                      (out.tags // 1000) % 4)

    def test_jitter_keeps_series_valid(self):
        spec = det.DetectorSpec(quantum_efficiency=1.0, dead_time_ps=0,
                                jitter_fwhm_ps=5000.0)
        s = series(np.arange(1000, dtype=np.int64) * 100 + 50_000,
                   duration=200_000)
        out = det.detect(s, spec, np.random.default_rng(3))
        assert out.count == s.count
        assert np.all(np.diff(out.tags) > 0)
        assert out.tags[0] >= 0 and out.tags[-1] < out.duration_ps

    def test_jitter_magnitude(self):
        spec = det.DetectorSpec(quantum_efficiency=1.0, dead_time_ps=0,
                                jitter_fwhm_ps=350.0)
        s = series(np.arange(20_000, dtype=np.int64) * 100_000 + 500_000)
        out = det.detect(s, spec, np.random.default_rng(4))
        sigma = np.std(out.tags - s.tags)
        assert sigma == pytest.approx(350.0 / 2.3548, rel=0.05)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            det.DetectorSpec(quantum_efficiency=0.0)
        with pytest.raises(ValueError):
            det.DetectorSpec(quantum_efficiency=0.5, dead_time_ps=-1)
        with pytest.raises(ValueError):
            det.DetectorSpec(quantum_efficiency=0.5,
                             sigma_convention="rms")


class TestSigmaConventions:
    def test_fwhm_standard(self):
        spec = det.DetectorSpec(quantum_efficiency=0.5, jitter_fwhm_ps=350.0,
                                sigma_convention="fwhm_standard")
        expected = 350.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))
        assert spec.jitter_sigma_ps == pytest.approx(expected, rel=1e-12)

    def test_times_2p3(self):
        spec = det.DetectorSpec(quantum_efficiency=0.5, jitter_fwhm_ps=350.0,
                                sigma_convention="times_2p3")
        assert spec.jitter_sigma_ps == pytest.approx(805.0, rel=1e-12)


class TestTcspcm:
    def test_zero_loss_unity_efficiency(self):
        spec = det.TcspcmSpec(sma_loss_db=0.0)
        assert spec.efficiency == 1.0
        s = series(np.arange(50) * 1000)
        out = det.tcspcm_record(s, spec, np.random.default_rng(0))
        np.testing.assert_array_equal(out.tags, s.tags)

    def test_three_db_loss(self):
        spec = det.TcspcmSpec(sma_loss_db=3.0)
        assert spec.efficiency == pytest.approx(10**-0.3)
        n = 100_000
        s = series(np.arange(n, dtype=np.int64) * 1000)
        out = det.tcspcm_record(s, spec, np.random.default_rng(5))
        p = 10**-0.3
        assert abs(out.count - p * n) <= 3 * np.sqrt(n * p * (1 - p))

    def test_ten_db_loss(self):
        assert det.TcspcmSpec(sma_loss_db=10.0).efficiency == 0.1

    def test_negative_loss_rejected(self):
        with pytest.raises(ValueError):
            det.TcspcmSpec(sma_loss_db=-1.0)


@pytest.fixture(scope="module")
def bg_spec():
    ideal = det.DetectorSpec(quantum_efficiency=1.0, dead_time_ps=0,
                             jitter_fwhm_ps=0.0)
    return det.BackgroundPipelineSpec(
        reference_pair_rate_hz=18e6,
        herald_efficiency=0.40,
        receiver_efficiency=0.36,
        herald_detector=ideal,
        receiver_detector=ideal,
        tcspcm=det.TcspcmSpec(),
        duration_s=0.1,
    )


@pytest.fixture(scope="module")
def bg_table(bg_spec):
    grid = np.array([0.0, 1e6, 2e6])
    return det.calibrate_background(bg_spec, grid, np.random.default_rng(17))


class TestBackgroundCalibration:
    def test_reference_rate_recorded(self, bg_table):
        assert bg_table.reference_signal_rate_hz == 18e6

    def test_levels_monotone_in_incidence(self, bg_table):
        assert np.all(np.diff(bg_table.level_grid) > 0)

    def test_doubling_incidence_doubles_added_level(self, bg_table):
        # accidental rate is R1 R2 tau: linear in the incident rate once the
        # signal-only baseline is subtracted
        base, one, two = bg_table.level_grid
        assert (two - base) / (one - base) == pytest.approx(2.0, rel=0.05)

    def test_zero_target_maps_to_zero_incidence(self, bg_table):
        assert det.incident_background_rate(bg_table, 0.0) == 0.0

    def test_grid_point_inverts_exactly(self, bg_table):
        got = det.incident_background_rate(bg_table, bg_table.level_grid[1])
        assert got == pytest.approx(1e6, rel=1e-12)

    def test_reference_signal_rate_is_unit_ratio(self, bg_table):
        lvl = float(bg_table.level_grid[1])
        plain = det.incident_background_rate(bg_table, lvl)
        scaled = det.incident_background_rate(bg_table, lvl,
                                              signal_rate_hz=18e6)
        assert scaled == plain

    def test_midpoint_query_interpolates_linearly(self, bg_table):
        target = 0.5 * (bg_table.level_grid[0] + bg_table.level_grid[1])
        got = det.incident_background_rate(bg_table, target)
        assert got == pytest.approx(0.5e6, rel=1e-12)

    def test_out_of_range_level_rejected(self, bg_table):
        with pytest.raises(det.CalibrationRangeError):
            det.incident_background_rate(bg_table,
                                         2.0 * bg_table.level_grid[-1])

    def test_out_of_range_signal_rate_rejected(self, bg_table):
        with pytest.raises(det.CalibrationRangeError):
            det.incident_background_rate(bg_table, bg_table.level_grid[1],
                                         signal_rate_hz=100e6)

    def test_bad_grid_rejected(self, bg_spec):
        with pytest.raises(ValueError):
            det.calibrate_background(bg_spec, np.array([1e6]),
                                     np.random.default_rng(0))
        with pytest.raises(ValueError):
            det.calibrate_background(bg_spec, np.array([2e6, 1e6]),
                                     np.random.default_rng(0))


class TestTablePersistence:
    def test_round_trip_is_exact(self, bg_table, tmp_path):
        path = tmp_path / "table.csv"
        det.write_calibration_table(bg_table, path)
        loaded = det.read_calibration_table(path)
        np.testing.assert_array_equal(loaded.incidence_grid_hz,
                                      bg_table.incidence_grid_hz)
        np.testing.assert_array_equal(loaded.level_grid, bg_table.level_grid)
        np.testing.assert_array_equal(loaded.ratio_values,
                                      bg_table.ratio_values)
        assert loaded.params_key == bg_table.params_key
        assert loaded.reference_signal_rate_hz == \
            bg_table.reference_signal_rate_hz

    def test_cache_hit_skips_rebuild(self, bg_spec, tmp_path):
        grid = np.array([0.0, 1e6])
        first = det.cached_calibration(bg_spec, grid,
                                       np.random.default_rng(1),
                                       directory=tmp_path)
        # a different rng would change the table if it were rebuilt
        second = det.cached_calibration(bg_spec, grid,
                                        np.random.default_rng(999),
                                        directory=tmp_path)
        np.testing.assert_array_equal(first.level_grid, second.level_grid)

    def test_spec_change_regenerates(self, bg_spec, tmp_path):
        from dataclasses import replace
        grid = np.array([0.0, 1e6])
        det.cached_calibration(bg_spec, grid, np.random.default_rng(1),
                               directory=tmp_path)
        other = replace(bg_spec, herald_efficiency=0.5)
        det.cached_calibration(other, grid, np.random.default_rng(1),
                               directory=tmp_path)
        files = list(tmp_path.glob("bgcal_*.csv"))
        assert len(files) == 2
