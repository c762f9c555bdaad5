import io
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colocate import ingest
from colocate.ingest import EventRecord, TraceFormatError, UsageRecord

HEADER = "task_id,interval_index,inst_usage,avg_usage\n"


def usage(*rows):
    return [UsageRecord(*r) for r in rows]


records_strategy = st.lists(
    st.builds(UsageRecord,
              st.sampled_from(["a", "b", "c", "d"]),
              st.integers(0, 50),
              st.one_of(st.just(0.0), st.floats(0, 1.6, allow_nan=False)),
              st.floats(0, 1.6, allow_nan=False)),
    max_size=40)
events_strategy = st.lists(st.builds(EventRecord, st.sampled_from(["a", "b", "c", "d"]), st.integers(0, 8)),
                           max_size=6)


class TestParse:
    def test_header_only(self):
        assert ingest.parse_usage_csv(HEADER.encode()) == []

    def test_one_row(self):
        assert ingest.parse_usage_csv((HEADER + "t1,0,0.2,0.25\n").encode()) == usage(("t1", 0, 0.2, 0.25))

    def test_bad_value_names_line(self):
        with pytest.raises(TraceFormatError, match="line 2") as exc:
            ingest.parse_usage_csv((HEADER + "t1,0,abc,0.25\n").encode())
        assert exc.value.line == 2

    def test_line_numbers_count_comments(self):
        text = "# produced elsewhere\n" + HEADER + "t1,0,0.2,0.2\nt1,1,0.2\n"
        with pytest.raises(TraceFormatError, match="line 4"):
            ingest.parse_usage_csv(text.encode())

    @pytest.mark.parametrize("row", ["t1,0,-0.1,0.2", "t1,0,0.1,-0.2", "t1,0,nan,0.2"])
    def test_negative_usage(self, row):
        with pytest.raises(TraceFormatError, match="line 2"):
            ingest.parse_usage_csv((HEADER + row + "\n").encode())

    def test_missing_header(self):
        with pytest.raises(TraceFormatError):
            ingest.parse_usage_csv(b"t1,0,0.2,0.25\n")

    def test_sources(self, tmp_path):
        text = HEADER + "t1,3,0.2,0.25\nt2,0,0.1,0.1\n"
        path = tmp_path / "u.csv"
        path.write_text(text)
        expected = ingest.parse_usage_csv(text.encode())
        assert ingest.parse_usage_csv(path) == expected
        assert ingest.parse_usage_csv(str(path)) == expected
        assert ingest.parse_usage_csv(io.BytesIO(text.encode())) == expected
        assert ingest.parse_usage_csv(io.StringIO(text)) == expected

    def test_events(self):
        ev = ingest.parse_events_csv(b"task_id,event_code\nt1,3\nt2,4\n")
        assert ev == [EventRecord("t1", 3), EventRecord("t2", 4)]

    def test_unknown_event_code(self):
        with pytest.raises(TraceFormatError, match="line 2"):
            ingest.parse_events_csv(b"task_id,event_code\nt1,42\n")


class TestCleanup:
    def test_failing_removed(self):
        recs = usage(("t1", 0, 0.1, 0.1), ("t2", 0, 0.2, 0.2), ("t1", 1, 0.1, 0.1))
        out = ingest.filter_failing_tasks(recs, [EventRecord("t1", 3), EventRecord("t2", 4)])
        assert out == usage(("t2", 0, 0.2, 0.2))

    @pytest.mark.parametrize("code, kept", [(2, False), (3, False), (5, False), (6, False), (0, True), (1, True),
                                            (4, True), (7, True), (8, True)])
    def test_failing_codes(self, code, kept):
        recs = usage(("t", 0, 0.1, 0.1))
        assert (ingest.filter_failing_tasks(recs, [EventRecord("t", code)]) == recs) is kept

    def test_no_events_identity(self):
        recs = usage(("t1", 0, 0.1, 0.1))
        assert ingest.filter_failing_tasks(recs, []) == recs

    def test_zero_usage(self):
        recs = usage(("z", 0, 0.0, 0.1), ("z", 1, 0.0, 0.0), ("z", 2, 0.0, 0.2),
                     ("k", 0, 0.0, 0.0), ("k", 1, 0.01, 0.0), ("k", 2, 0.0, 0.0))
        assert [r.task_id for r in ingest.drop_zero_usage_tasks(recs)] == ["k"] * 3
        assert ingest.drop_zero_usage_tasks([]) == []

    def test_clamp_avg(self):
        out, n = ingest.clamp_invalid(usage(("t", 0, 0.3, 1.2)))
        assert out == usage(("t", 0, 0.3, 0.3)) and n == 1

    def test_clamp_noop(self):
        recs = usage(("t", 0, 0.3, 0.9))
        assert ingest.clamp_invalid(recs) == (recs, 0)

    def test_clamp_inst_warns(self, caplog):
        with caplog.at_level(logging.WARNING, logger="colocate.ingest"):
            out, n = ingest.clamp_invalid(usage(("t", 0, 1.5, 0.5)))
        assert out == usage(("t", 0, 1.0, 0.5)) and n == 1
        assert "clamped" in caplog.text

    def test_clamp_both_counts_once(self):
        out, n = ingest.clamp_invalid(usage(("t", 0, 1.5, 1.5)))
        assert out == usage(("t", 0, 1.0, 1.0)) and n == 1

    @settings(max_examples=200, deadline=None)
    @given(records_strategy, events_strategy)
    def test_pipeline_idempotent(self, recs, events):
        def once(r):
            r = ingest.filter_failing_tasks(r, events)
            r = ingest.drop_zero_usage_tasks(r)
            return ingest.clamp_invalid(r)[0]

        first = once(recs)
        assert once(first) == first

    @settings(max_examples=200, deadline=None)
    @given(records_strategy, events_strategy)
    def test_order_preserved(self, recs, events):
        out = ingest.drop_zero_usage_tasks(ingest.filter_failing_tasks(recs, events))
        it = iter(recs)
        assert all(any(r == s for s in it) for r in out)

    @settings(max_examples=200, deadline=None)
    @given(records_strategy, events_strategy)
    def test_profiles_within_unit_interval(self, recs, events):
        profiles, _ = ingest.preprocess(recs, events, threshold_records=1, include_short=True)
        for p in profiles:
            for d in (p.inst, p.avg):
                assert np.all((d.samples >= 0) & (d.samples <= 1))


class TestProfiles:
    def test_constant(self):
        p = ingest.build_profile("t", usage(("t", 0, 0.5, 0.5), ("t", 1, 0.5, 0.5)))
        assert p.mu == 0.5 and p.sigma == 0.0

    def test_two_point(self):
        p = ingest.build_profile("t", usage(("t", 0, 0.0, 0.0), ("t", 1, 1.0, 1.0)))
        assert p.mu == 0.5 and p.sigma == 0.5
        assert p.histogram[0] == 0.5 and p.histogram[99] == 0.5

    def test_duration(self):
        p = ingest.build_profile("t", usage(*[("t", i, 0.1, 0.1) for i in range(24)]))
        assert p.duration_records == 24 == len(p.avg)

    def test_ordered_by_interval(self):
        p = ingest.build_profile("t", usage(("t", 5, 0.3, 0.03), ("t", 1, 0.1, 0.01), ("t", 3, 0.2, 0.02)))
        np.testing.assert_array_equal(p.inst.samples, [0.1, 0.2, 0.3])
        np.testing.assert_array_equal(p.avg.samples, [0.01, 0.02, 0.03])

    def test_no_records(self):
        with pytest.raises(TraceFormatError):
            ingest.build_profile("t", [])

    def test_cached_stats_consistent(self):
        x = np.random.default_rng(0).uniform(size=50)
        p = ingest.TaskProfile.from_samples("t", x)
        assert p.mu == pytest.approx(x.mean()) and p.sigma == pytest.approx(x.std())

    @pytest.mark.parametrize("n, is_long", [(24, True), (23, False), (100, True), (1, False)])
    def test_partition(self, n, is_long):
        p = ingest.TaskProfile.from_samples("t", np.full(n, 0.1))
        long, short = ingest.partition_by_duration([p])
        assert (long == [p]) is is_long and (short == [p]) is not is_long

    def test_partition_all_long(self):
        ps = [ingest.TaskProfile.from_samples(str(i), np.full(30, 0.1)) for i in range(3)]
        assert ingest.partition_by_duration(ps) == (ps, [])


class TestPreprocess:
    @pytest.fixture
    def trace(self):
        rows = [("long", i, 0.2, 1.3 if i == 0 else 0.2) for i in range(30)]
        rows += [("short", i, 0.1, 0.1) for i in range(5)]
        rows += [("idle", i, 0.0, 0.1) for i in range(30)]
        rows += [("failed", i, 0.4, 0.4) for i in range(30)]
        return usage(*rows), [EventRecord("failed", 5)]

    def test_summary(self, trace):
        profiles, summary = ingest.preprocess(*trace)
        assert [p.task_id for p in profiles] == ["long"]
        assert summary == {"tasks_in": 4, "failing_dropped": 1, "zero_usage_dropped": 1,
                           "records_clamped": 1, "long": 1, "short": 1}
        assert profiles[0].avg.samples[0] == 0.2

    def test_include_short(self, trace):
        profiles, _ = ingest.preprocess(*trace, include_short=True)
        assert [p.task_id for p in profiles] == ["long", "short"]

    def test_round_trip(self, trace):
        profiles, _ = ingest.preprocess(*trace, include_short=True)
        buf = io.StringIO()
        ingest.write_usage_csv(profiles, buf)
        again = ingest.build_profiles(ingest.parse_usage_csv(buf.getvalue().encode()))
        for a, b in zip(profiles, again):
            assert a.task_id == b.task_id
            np.testing.assert_array_equal(a.inst.samples, b.inst.samples)
            np.testing.assert_array_equal(a.avg.samples, b.avg.samples)

    def test_profile_summary(self, trace):
        profiles, _ = ingest.preprocess(*trace)
        buf = io.StringIO()
        ingest.write_profile_summary(profiles, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "task_id,duration_records,mu,sigma"
        assert lines[1].startswith("long,30,")
