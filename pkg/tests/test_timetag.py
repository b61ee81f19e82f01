"""Tests for time-tag stream generation, transforms, and file round-trips."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from b92sim.timetag import (
    InvalidRateError,
    SinglePhotonStatModel,
    TagFileError,
    ThermalStatModel,
    TimeTagSeries,
    apply_delay,
    generate_single_photon_tags,
    generate_thermal_background_tags,
    inter_arrival_histogram,
    merge,
    read_tags,
    resample_tags,
    write_tags,
)

PS_PER_S = 10**12


@pytest.fixture(scope="module")
def dense_stream():
    """10^7 /s single-photon stream over one second, shared across tests."""
    model = SinglePhotonStatModel(rate_hz=1e7)
    return generate_single_photon_tags(model, PS_PER_S, np.random.default_rng(2))


class TestTimeTagSeries:
    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            TimeTagSeries(np.array([5, 5, 9]), 100)  # duplicate
        with pytest.raises(ValueError):
            TimeTagSeries(np.array([9, 5]), 100)  # decreasing
        with pytest.raises(ValueError):
            TimeTagSeries(np.array([-1]), 100)  # below origin
        with pytest.raises(ValueError):
            TimeTagSeries(np.array([100]), 100)  # at/after duration
        with pytest.raises(ValueError):
            TimeTagSeries(np.array([], dtype=np.int64), 0)

    def test_properties(self):
        s = TimeTagSeries(np.array([10, 20, 30]), 2 * PS_PER_S)
        assert s.count == 3
        assert s.duration_s == 2.0
        assert s.rate_hz == pytest.approx(1.5)

    def test_tags_are_int64(self):
        s = TimeTagSeries([1, 2, 3], 10)
        assert s.tags.dtype == np.int64


class TestSinglePhotonGeneration:
    def test_per_bin_probability_at_paper_rate(self):
        # 10^7 events/s in 1 ps bins puts 1e-5 of a photon in each bin.
        model = SinglePhotonStatModel(rate_hz=1e7)
        assert model.bin_probability == pytest.approx(1e-5)

    def test_count_near_rate_times_duration(self, dense_stream):
        expected = 1e7
        assert abs(dense_stream.count - expected) < 5 * np.sqrt(expected)

    def test_stream_is_strictly_increasing(self, dense_stream):
        assert np.all(np.diff(dense_stream.tags) > 0)
        assert dense_stream.tags[0] >= 0
        assert dense_stream.tags[-1] < dense_stream.duration_ps

    def test_degenerate_duration_rejected(self):
        model = SinglePhotonStatModel(rate_hz=1e4)
        with pytest.raises(ValueError):
            generate_single_photon_tags(model, 0, np.random.default_rng(0))

    def test_nonpositive_rate_rejected(self):
        with pytest.raises(InvalidRateError):
            SinglePhotonStatModel(rate_hz=0.0)
        with pytest.raises(InvalidRateError):
            # per-bin probability >= 0.1 would not be a sparse stream
            SinglePhotonStatModel(rate_hz=2e11)

    def test_poisson_limit_over_many_seeds(self):
        """At 10^4 /s for 10 ms the count is Poisson-like around 100."""
        counts = np.empty(1000)
        model = SinglePhotonStatModel(rate_hz=1e4)
        for seed in range(1000):
            s = generate_single_photon_tags(model, 10**10,
                                            np.random.default_rng(seed))
            counts[seed] = s.count
        assert np.all(np.abs(counts - 100) <= 4 * np.sqrt(100))
        assert abs(counts.mean() - 100) < 2.0

    def test_antibunching_suppresses_short_gaps(self):
        # A dense stream makes the dip at small inter-arrival times visible:
        # gaps well inside the coherence time must be rarer than the
        # geometric baseline, and gaps of a few coherence times must not be.
        model = SinglePhotonStatModel(rate_hz=1e9, coherence_time_ps=10.0)
        s = generate_single_photon_tags(model, 10**9, np.random.default_rng(5))
        gaps = np.diff(s.tags)
        p = model.bin_probability

        def baseline(lo, hi):
            return (1 - p) ** (lo - 1) - (1 - p) ** hi

        assert np.mean(gaps == 1) < 0.5 * baseline(1, 1)
        assert np.mean(gaps <= 3) < 0.7 * baseline(1, 3)
        long = np.mean((gaps >= 60) & (gaps <= 200))
        assert long == pytest.approx(baseline(60, 200), rel=0.05)


class TestThermalGeneration:
    def test_per_bin_occupancy_at_paper_rate(self):
        model = ThermalStatModel(mean_rate_hz=1e5)
        assert model.single_event_probability == pytest.approx(1e-7)

    def test_zero_probability_gives_empty_series(self):
        model = ThermalStatModel(mean_rate_hz=0.0)
        s = generate_thermal_background_tags(model, 10**6,
                                             np.random.default_rng(0))
        assert s.count == 0
        assert s.duration_ps == 10**6

    def test_two_photon_event_rate(self):
        """P1 = 1e-4 over 1e9 bins yields about ten two-photon events.

        A two-photon event is stored as two adjacent picosecond tags, so
        it shows up as a unit gap; chance adjacency of singles adds roughly
        the same number again, well inside the +-10 sqrt(10) tolerance.
        """
        model = ThermalStatModel(mean_rate_hz=1e8)  # P1 = 1e-4 per 1 ps bin
        s = generate_thermal_background_tags(model, 10**9,
                                             np.random.default_rng(7))
        doubles = int(np.sum(np.diff(s.tags) == 1))
        assert abs(doubles - 10) <= 10 * np.sqrt(10)
        expected = (1e-4 + 2e-8) * 1e9
        assert abs(s.count - expected) < 5 * np.sqrt(expected)

    def test_oversaturated_probability_rejected(self):
        with pytest.raises(InvalidRateError):
            ThermalStatModel(mean_rate_hz=2e11)


@pytest.fixture(scope="module")
def template():
    model = SinglePhotonStatModel(rate_hz=1e6)
    return generate_single_photon_tags(model, 10**9, np.random.default_rng(3))


class TestResample:
    def test_count_matches_template(self, template):
        n = template.count
        rng = np.random.default_rng(11)
        counts = np.array([resample_tags(template, rng).count
                           for _ in range(1000)])
        assert abs(counts.mean() - n) < 5 * np.sqrt(n)
        # the paper's point: the effective pair number varies between draws
        assert counts.std() > 0

    def test_deterministic_for_fixed_rng(self, template):
        a = resample_tags(template, np.random.default_rng(42))
        b = resample_tags(template, np.random.default_rng(42))
        np.testing.assert_array_equal(a.tags, b.tags)

    def test_gap_distribution_preserved(self, template):
        res = resample_tags(template, np.random.default_rng(5))
        ks = stats.ks_2samp(np.diff(template.tags), np.diff(res.tags))
        assert ks.pvalue > 0.05

    def test_empty_template_rejected(self):
        s = TimeTagSeries(np.array([50]), 100)
        with pytest.raises(ValueError):
            resample_tags(s, np.random.default_rng(0))


class TestMerge:
    def test_sorted_union(self):
        a = TimeTagSeries(np.array([1, 5]), 10)
        b = TimeTagSeries(np.array([3]), 10)
        np.testing.assert_array_equal(merge(a, b).tags, [1, 3, 5])

    def test_empty_is_identity(self):
        a = TimeTagSeries(np.array([2, 4, 8]), 10)
        empty = TimeTagSeries(np.array([], dtype=np.int64), 10)
        np.testing.assert_array_equal(merge(a, empty).tags, a.tags)

    def test_collision_keeps_both_tags(self):
        a = TimeTagSeries(np.array([5]), 100)
        b = TimeTagSeries(np.array([5]), 100)
        merged = merge(a, b)
        assert merged.count == 2
        np.testing.assert_array_equal(merged.tags, [5, 6])

    @settings(max_examples=25, deadline=None)
    @given(st.sets(st.integers(0, 9999), min_size=1, max_size=200),
           st.sets(st.integers(0, 9999), min_size=1, max_size=200))
    def test_disjoint_sets_add_lengths(self, xs, ys):
        ys = ys - xs
        a = TimeTagSeries(np.sort(np.fromiter(xs, np.int64)), 10000)
        merged = merge(a, TimeTagSeries(np.sort(np.fromiter(ys, np.int64)),
                                        10000)) if ys else a
        assert merged.count == len(xs) + len(ys)
        assert np.all(np.diff(merged.tags) > 0)


class TestApplyDelay:
    def test_zero_delay_is_identity(self):
        s = TimeTagSeries(np.array([100, 200]), 1000)
        out = apply_delay(s, 0)
        np.testing.assert_array_equal(out.tags, s.tags)
        assert out.duration_ps == s.duration_ps

    def test_arithmetic_shift(self):
        s = TimeTagSeries(np.array([100, 200]), 1000)
        out = apply_delay(s, 10000)
        np.testing.assert_array_equal(out.tags, [10100, 10200])

    def test_ten_ns_delay_separates_coincidence_peaks(self):
        # the delayed copy of a stream coincides with the original exactly
        # 10 ns later, the mechanism behind the second histogram peak
        s = TimeTagSeries(np.arange(0, 10**6, 1000, dtype=np.int64), 10**6)
        delayed = apply_delay(s, 10_000)
        np.testing.assert_array_equal(delayed.tags - s.tags, 10_000)

    def test_negative_delay_rejected(self):
        s = TimeTagSeries(np.array([5]), 10)
        with pytest.raises(ValueError):
            apply_delay(s, -1)


class TestInterArrivalHistogram:
    def test_two_tags_single_count(self):
        s = TimeTagSeries(np.array([0, 7]), 10)
        hist = inter_arrival_histogram(s, 1)
        assert hist[7] == 1
        assert hist.sum() == 1

    def test_zero_gap_bin_is_empty(self, dense_stream):
        # no two photons share a picosecond bin, so Delta t = 0 never occurs
        hist = inter_arrival_histogram(dense_stream, 1)
        assert hist[0] == 0

    def test_exponential_decay_envelope(self, dense_stream):
        hist = inter_arrival_histogram(dense_stream, 1000)
        idx = np.arange(hist.size)
        mask = hist >= 50
        lr = stats.linregress(idx[mask], np.log(hist[mask]))
        assert lr.rvalue**2 >= 0.99
        # decay constant is the per-ns event probability
        assert lr.slope == pytest.approx(-0.01, rel=0.05)

    def test_insufficient_data_rejected(self):
        s = TimeTagSeries(np.array([5]), 10)
        with pytest.raises(ValueError):
            inter_arrival_histogram(s, 1)


class TestTagFiles:
    def test_round_trip(self, tmp_path):
        s = TimeTagSeries(np.array([0, 17, 913, 10**11]), PS_PER_S)
        path = tmp_path / "ch.tags"
        write_tags(s, path, channel="alice_v")
        loaded, channel = read_tags(path)
        np.testing.assert_array_equal(loaded.tags, s.tags)
        assert loaded.duration_ps == s.duration_ps
        assert channel == "alice_v"

    def test_empty_series_round_trip(self, tmp_path):
        s = TimeTagSeries(np.array([], dtype=np.int64), 100)
        path = tmp_path / "empty.tags"
        write_tags(s, path)
        loaded, channel = read_tags(path)
        assert loaded.count == 0
        assert loaded.duration_ps == 100
        assert channel == "ch0"

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.tags"
        path.write_text("12345\n67890\n")
        with pytest.raises(TagFileError):
            read_tags(path)

    def test_bad_channel_id_rejected(self, tmp_path):
        s = TimeTagSeries(np.array([1]), 10)
        with pytest.raises(TagFileError):
            write_tags(s, tmp_path / "x.tags", channel="has space")
