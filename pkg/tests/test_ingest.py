import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tnpar.ingest import (
    CountTensor,
    EventRecord,
    discretize,
    make_windows,
    merge_nodes,
    read_events_csv,
    write_events_csv,
)


@st.composite
def event_lists(draw, horizon=20.0, types=3, nodes=4):
    n = draw(st.integers(0, 40))
    return [
        EventRecord(
            draw(st.integers(0, types - 1)),
            draw(st.integers(0, nodes - 1)),
            draw(st.floats(0.0, horizon, allow_nan=False)),
        )
        for _ in range(n)
    ]


class TestDiscretize:
    def test_empty(self):
        t = discretize([], 2.0, 10.0, 2, 3)
        assert t.counts.shape == (5, 2, 3)
        assert not t.counts.any()

    def test_single_event_lands_in_second_bin(self):
        t = discretize([EventRecord(0, 0, 3.5)], 2.0, 10.0, 1, 1)
        assert t.counts[:, 0, 0].tolist() == [0, 1, 0, 0, 0]

    def test_same_cell_adds(self):
        t = discretize([EventRecord(1, 0, 1.0), EventRecord(1, 0, 1.5)], 2.0, 4.0, 2, 1)
        assert t.counts[0, 1, 0] == 2

    def test_interval_is_left_open(self):
        t = discretize([EventRecord(0, 0, 2.0), EventRecord(0, 0, 2.0001)], 2.0, 6.0, 1, 1)
        assert t.counts[:, 0, 0].tolist() == [1, 1, 0]

    def test_time_zero_goes_to_first_bin(self):
        t = discretize([EventRecord(0, 0, 0.0)], 2.0, 4.0, 1, 1)
        assert t.counts[0, 0, 0] == 1

    @pytest.mark.parametrize("delta", [0.0, -1.0])
    def test_bad_delta(self, delta):
        with pytest.raises(ValueError):
            discretize([], delta, 4.0, 1, 1)

    def test_out_of_range_names_record(self):
        with pytest.raises(ValueError, match="record 1"):
            discretize([EventRecord(0, 0, 1.0), EventRecord(0, 5, 1.0)], 2.0, 4.0, 1, 2)

    def test_timestamp_past_horizon(self):
        with pytest.raises(ValueError, match="record 0"):
            discretize([EventRecord(0, 0, 9.0)], 2.0, 4.0, 1, 1)

    @given(event_lists(), st.sampled_from([0.5, 1.0, 2.0, 3.0]))
    def test_conservation(self, events, delta):
        assert discretize(events, delta, 20.0, 3, 4).counts.sum() == len(events)

    @given(event_lists())
    def test_refinement_consistency(self, events):
        fine = discretize(events, 1.0, 20.0, 3, 4).counts
        coarse = discretize(events, 2.0, 20.0, 3, 4).counts
        np.testing.assert_array_equal(fine[0::2] + fine[1::2], coarse)


class TestWindows:
    def test_single_bin_is_zero_padded(self):
        t = CountTensor(np.ones((1, 2, 2), dtype=int), 1.0)
        (w,) = make_windows(t, 3)
        assert w.history.shape == (3, 2, 2)
        assert not w.history.any()

    def test_history_order(self):
        counts = np.arange(5).reshape(5, 1, 1)
        windows = list(make_windows(CountTensor(counts, 1.0), 2))
        assert len(windows) == 5
        # t=3 (1-based) is storage index 2: history holds bins 2 and 1, i.e. values 1, 0
        assert windows[2].history[:, 0, 0].tolist() == [1, 0]
        assert windows[2].t_index == 2

    def test_constant_tensor(self):
        t = CountTensor(np.full((6, 2, 3), 4), 1.0)
        for w in list(make_windows(t, 2))[2:]:
            np.testing.assert_array_equal(w.history[0], w.history[1])

    def test_bad_omega(self):
        with pytest.raises(ValueError):
            next(make_windows(CountTensor(np.zeros((2, 1, 1), int), 1.0), 0))

    @settings(max_examples=30)
    @given(st.integers(1, 8), st.integers(1, 4), st.integers(0, 2**31 - 1))
    def test_targets_reassemble_tensor(self, bins, omega, seed):
        counts = np.random.default_rng(seed).poisson(1.0, (bins, 2, 3))
        windows = list(make_windows(CountTensor(counts, 1.0), omega))
        np.testing.assert_array_equal(np.stack([w.target for w in windows]), counts)
        for w in windows:
            for lag in range(omega):
                src = w.t_index - 1 - lag
                expected = counts[src] if src >= 0 else 0
                np.testing.assert_array_equal(w.history[lag], expected)


class TestMerge:
    def test_single_node_unchanged(self):
        t = CountTensor(np.arange(6).reshape(3, 2, 1), 1.0)
        np.testing.assert_array_equal(merge_nodes(t).counts, t.counts)

    def test_sums_nodes(self):
        counts = np.zeros((1, 1, 2), dtype=int)
        counts[0, 0] = [1, 2]
        assert merge_nodes(CountTensor(counts, 1.0)).counts[0, 0, 0] == 3

    @given(st.integers(0, 2**31 - 1))
    def test_conservation(self, seed):
        counts = np.random.default_rng(seed).poisson(2.0, (4, 3, 5))
        merged = merge_nodes(CountTensor(counts, 1.0))
        assert merged.node_count == 1
        assert merged.counts.sum() == counts.sum()


class TestEventsCsv:
    def test_round_trip(self, tmp_path):
        events = [EventRecord(0, 1, 0.1), EventRecord(2, 0, 3.0000000000000004)]
        write_events_csv(events, tmp_path / "e.csv")
        assert read_events_csv(tmp_path / "e.csv") == events

    def test_bad_header(self, tmp_path):
        (tmp_path / "e.csv").write_text("type,node,time\n")
        with pytest.raises(ValueError, match="line 1"):
            read_events_csv(tmp_path / "e.csv")

    def test_malformed_row_reports_line(self, tmp_path):
        (tmp_path / "e.csv").write_text("event_type,node,timestamp\n0,0,1.0\n0,zero,2.0\n")
        with pytest.raises(ValueError, match="line 3"):
            read_events_csv(tmp_path / "e.csv")

    def test_negative_rejected(self, tmp_path):
        (tmp_path / "e.csv").write_text("event_type,node,timestamp\n0,0,-1\n")
        with pytest.raises(ValueError, match="line 2"):
            read_events_csv(tmp_path / "e.csv")
