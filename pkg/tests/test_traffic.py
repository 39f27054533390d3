import numpy as np
import pytest

from v2nsim.traffic import (
    IntensityTable,
    TrafficTrace,
    generate_arrivals,
    load_intensity_csv,
    read_trace,
    replicate,
    synth_intensity,
    write_intensity_csv,
    write_trace,
)


class TestSynthIntensity:
    def test_window_count(self):
        table = synth_intensity(1, 1, 100, 20, seed=0)
        assert len(table.entries) == 288  # 86400 / 300

    def test_flat_profile_when_trough_equals_peak(self):
        table = synth_intensity(3, 1, 80, 80, phase_per_pop_hours=2.0, seed=5)
        rates = {rate for _, _, rate in table.entries}
        assert rates == {80.0}

    def test_zero_phase_makes_pops_identical(self):
        table = synth_intensity(3, 1, 120, 30, phase_per_pop_hours=0.0, seed=9)
        by_pop = {}
        for start, pop, rate in table.entries:
            by_pop.setdefault(pop, []).append((start, rate))
        assert by_pop[0] == by_pop[1] == by_pop[2]

    def test_range_and_determinism(self):
        a = synth_intensity(2, 2, 300, 30, 1.0, seed=4)
        b = synth_intensity(2, 2, 300, 30, 1.0, seed=4)
        c = synth_intensity(2, 2, 300, 30, 1.0, seed=5)
        assert a.entries == b.entries
        assert a.entries != c.entries
        assert all(rate >= 0 for _, _, rate in a.entries)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            synth_intensity(1, 1, 10, 20, seed=0)  # trough above peak
        with pytest.raises(ValueError):
            synth_intensity(0, 1, 10, 5, seed=0)


class TestIntensityTable:
    def test_gap_rejected(self):
        with pytest.raises(ValueError):
            IntensityTable(entries=((0.0, 0, 10.0), (600.0, 0, 12.0)), window_seconds=300.0)

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            IntensityTable(entries=((0.0, 0, 10.0), (100.0, 0, 12.0)), window_seconds=300.0)

    def test_negative_rate_rejected(self):
        with pytest.raises(ValueError):
            IntensityTable(entries=((0.0, 0, -1.0),))

    def test_digest_tracks_content(self):
        a = IntensityTable(entries=((0.0, 0, 10.0), (300.0, 0, 12.0)))
        b = IntensityTable(entries=((0.0, 0, 10.0), (300.0, 0, 12.0)))
        c = IntensityTable(entries=((0.0, 0, 10.0), (300.0, 0, 12.5)))
        assert a.digest() == b.digest()
        assert a.digest() != c.digest()


class TestIntensityCsv:
    def test_round_trip(self, tmp_path):
        table = synth_intensity(2, 1, 50, 10, 1.0, seed=2)
        path = tmp_path / "intensity.csv"
        write_intensity_csv(table, path)
        assert load_intensity_csv(path) == table

    def test_header_mismatch(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("start,pop,rate\n0,0,10\n")
        with pytest.raises(ValueError):
            load_intensity_csv(path)

    def test_negative_row_rejected(self, tmp_path):
        path = tmp_path / "neg.csv"
        path.write_text("window_start_s,pop_id,lambda_veh_per_hour\n0.0,0,-5\n")
        with pytest.raises(ValueError):
            load_intensity_csv(path)

    def test_gap_rejected(self, tmp_path):
        path = tmp_path / "gap.csv"
        path.write_text(
            "window_start_s,pop_id,lambda_veh_per_hour\n"
            "0.0,0,10\n300.0,0,10\n0.0,1,10\n600.0,1,10\n"
        )
        with pytest.raises(ValueError):
            load_intensity_csv(path)


class TestGenerateArrivals:
    def test_zero_intensity_gives_empty_trace(self):
        table = IntensityTable(entries=((0.0, 0, 0.0), (300.0, 0, 0.0)))
        trace = generate_arrivals(table, seed=1)
        assert trace.events == ()

    def test_poisson_count_within_three_sigma(self):
        # 3600 veh/h for one hour: expect 3600 +- 3*sqrt(3600)
        entries = tuple((300.0 * w, 0, 3600.0) for w in range(12))
        trace = generate_arrivals(IntensityTable(entries=entries), seed=7)
        assert abs(len(trace.events) - 3600) <= 180

    def test_determinism_and_seed_sensitivity(self):
        table = synth_intensity(2, 1, 100, 40, 0.5, seed=3)
        a = generate_arrivals(table, seed=11)
        b = generate_arrivals(table, seed=11)
        c = generate_arrivals(table, seed=12)
        assert a.events == b.events
        assert a.events != c.events
        assert a.source_hash == table.digest()

    def test_events_sorted_and_in_windows(self):
        entries = ((300.0, 0, 1200.0), (600.0, 0, 0.0), (900.0, 0, 600.0))
        trace = generate_arrivals(IntensityTable(entries=entries), seed=5)
        times = [t for t, _ in trace.events]
        assert times == sorted(times)
        for t, _ in trace.events:
            assert (300.0 <= t < 600.0) or (900.0 <= t < 1200.0)

    def test_window_restriction(self):
        table = synth_intensity(1, 1, 200, 100, seed=1)
        trace = generate_arrivals(table, seed=2)
        cut = trace.window(1000.0, 2000.0)
        assert all(1000.0 <= t < 2000.0 for t, _ in cut.events)
        assert cut.seed == trace.seed


class TestReplicate:
    def test_forty_distinct_traces(self):
        entries = tuple((300.0 * w, 0, 120.0) for w in range(4))
        table = IntensityTable(entries=entries)
        traces = replicate(table, base_seed=50, k=40)
        assert len(traces) == 40
        assert [t.seed for t in traces] == list(range(50, 90))
        assert len({t.events for t in traces}) == 40

    def test_single_replication_matches_direct_call(self):
        table = synth_intensity(1, 1, 60, 30, seed=8)
        [only] = replicate(table, base_seed=5, k=1)
        assert only.events == generate_arrivals(table, 5).events

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            replicate(synth_intensity(1, 1, 10, 5, seed=0), 0, 0)


class TestTraceIO:
    def test_round_trip_identity(self, tmp_path):
        table = synth_intensity(2, 1, 150, 50, 1.0, seed=6)
        trace = generate_arrivals(table, seed=3)
        path = tmp_path / "trace.csv"
        write_trace(trace, path)
        again = read_trace(path)
        assert again == trace

    def test_empty_trace_round_trip(self, tmp_path):
        trace = TrafficTrace(events=(), seed=9, source_hash="abc")
        path = tmp_path / "empty.csv"
        write_trace(trace, path)
        assert read_trace(path) == trace

    def test_unsorted_file_rejected(self, tmp_path):
        path = tmp_path / "unsorted.csv"
        path.write_text("t_s,pop_id\n5.000000,0\n1.000000,0\n")
        with pytest.raises(ValueError):
            read_trace(path)

    def test_malformed_row_rejected(self, tmp_path):
        path = tmp_path / "mal.csv"
        path.write_text("t_s,pop_id\n1.0,0,9\n")
        with pytest.raises(ValueError):
            read_trace(path)
