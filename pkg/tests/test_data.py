import json

import pytest

from dmn import data
from dmn.data import (DataError, MetadataClass, RawEvent, build_recipient_vocab,
                      compute_inter_event_times, derive_metadata_class,
                      parse_event_log, split_sequences)


def write_csv(tmp_path, rows):
    path = tmp_path / "log.csv"
    path.write_text("timestamp,sender,recipients\n"
                    + "\n".join(rows) + "\n", encoding="utf-8")
    return str(path)


class TestParse:
    def test_basic_csv_row(self, tmp_path):
        path = write_csv(tmp_path, ["1696233600,alice,bob;carol"])
        events, _, _ = parse_event_log(path)
        assert events == [RawEvent(1696233600, "alice", frozenset({"bob", "carol"}))]

    def test_self_send_dropped(self, tmp_path):
        path = write_csv(tmp_path, ["100,alice,alice", "200,bob,carol"])
        events, dropped_self, _ = parse_event_log(path)
        assert len(events) == 1
        assert dropped_self == 1

    def test_self_removed_from_mixed_set(self, tmp_path):
        path = write_csv(tmp_path, ["100,alice,alice;bob"])
        events, _, _ = parse_event_log(path)
        assert events[0].recipients == frozenset({"bob"})

    def test_duplicates_dropped(self, tmp_path):
        path = write_csv(tmp_path, ["100,a,b", "100,a,b"])
        events, _, dropped_dup = parse_event_log(path)
        assert len(events) == 1
        assert dropped_dup == 1

    def test_sorted_by_timestamp(self, tmp_path):
        path = write_csv(tmp_path, ["300,a,b", "100,c,d"])
        events, _, _ = parse_event_log(path)
        assert [e.timestamp for e in events] == [100, 300]

    def test_malformed_row_reports_line(self, tmp_path):
        path = write_csv(tmp_path, ["100,a,b", "nonsense,a,b"])
        with pytest.raises(DataError, match="line 3"):
            parse_event_log(path)

    def test_empty_file_errors(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("", encoding="utf-8")
        with pytest.raises(DataError):
            parse_event_log(str(path))

    def test_jsonl_round_trip(self, tmp_path):
        path = tmp_path / "log.jsonl"
        rows = [{"timestamp": 100, "sender": "a", "recipients": ["b", "c"]},
                {"timestamp": 200, "sender": "b", "recipients": ["a"]}]
        path.write_text("\n".join(json.dumps(r) for r in rows), encoding="utf-8")
        events, _, _ = parse_event_log(str(path), fmt="jsonl")
        assert events[0].recipients == frozenset({"b", "c"})
        assert events[1].sender == "b"

    def test_csv_jsonl_equivalent(self, tmp_path):
        csv_path = write_csv(tmp_path, ["100,a,b;c", "200,b,a"])
        jl = tmp_path / "log.jsonl"
        jl.write_text('{"timestamp":100,"sender":"a","recipients":["b","c"]}\n'
                      '{"timestamp":200,"sender":"b","recipients":["a"]}\n',
                      encoding="utf-8")
        assert parse_event_log(csv_path)[0] == parse_event_log(str(jl), "jsonl")[0]


class TestMetadata:
    # 2023-10-03 is a Tuesday; timestamps built at UTC with tz_offset 0
    TUESDAY = 1696291200  # 2023-10-03 00:00:00 UTC

    def test_tuesday_10am_office(self):
        assert derive_metadata_class(self.TUESDAY + 10 * 3600) is MetadataClass.OFFICE_HOURS

    def test_saturday_afternoon_nonworking(self):
        saturday = self.TUESDAY + 4 * 86400
        assert derive_metadata_class(saturday + 14 * 3600) is MetadataClass.NON_WORKING

    def test_monday_0730_shoulder(self):
        monday = self.TUESDAY - 86400
        ts = monday + 7 * 3600 + 1800
        assert derive_metadata_class(ts) is MetadataClass.SHOULDER

    def test_weekday_night_nonworking(self):
        assert derive_metadata_class(self.TUESDAY + 23 * 3600) is MetadataClass.NON_WORKING

    def test_tz_offset_shifts_class(self):
        ts = self.TUESDAY + 8 * 3600  # 08:00 UTC -> shoulder
        assert derive_metadata_class(ts, 0) is MetadataClass.SHOULDER
        assert derive_metadata_class(ts, 60) is MetadataClass.OFFICE_HOURS

    def test_partition_every_timestamp_classified(self):
        for h in range(0, 7 * 24):
            cls = derive_metadata_class(self.TUESDAY + h * 3600)
            assert cls in MetadataClass


class TestVocab:
    def test_threshold_rule(self):
        events = [RawEvent(1, "x", frozenset({"a"})),
                  RawEvent(2, "x", frozenset({"a"})),
                  RawEvent(3, "x", frozenset({"b", "c"}))]
        vocab, kept = build_recipient_vocab(events, min_count=2)
        assert vocab.sets == [frozenset({"a"})]
        assert vocab.dropped_event_count == 1
        assert len(kept) == 2

    def test_min_count_one_keeps_all(self):
        events = [RawEvent(i, "x", frozenset({chr(97 + i)})) for i in range(5)]
        vocab, kept = build_recipient_vocab(events, min_count=1)
        assert vocab.dropped_event_count == 0
        assert len(vocab) == 5

    def test_ids_by_descending_frequency(self):
        events = ([RawEvent(i, "x", frozenset({"rare"})) for i in range(2)]
                  + [RawEvent(10 + i, "x", frozenset({"common"})) for i in range(5)])
        vocab, _ = build_recipient_vocab(events)
        assert vocab.sets[0] == frozenset({"common"})

    def test_ids_bijective(self):
        events = [RawEvent(i, "x", frozenset({chr(97 + i % 4)})) for i in range(12)]
        vocab, kept = build_recipient_vocab(events)
        assert sorted(vocab.index.values()) == list(range(len(vocab)))
        for ev in kept:
            assert ev.recipients in vocab.index

    def test_all_filtered_errors(self):
        events = [RawEvent(1, "x", frozenset({"a"}))]
        with pytest.raises(DataError, match="vocabulary empty"):
            build_recipient_vocab(events, min_count=2)


class TestTaus:
    def test_arithmetic(self):
        events = [RawEvent(0, "x", frozenset("a")),
                  RawEvent(3600, "x", frozenset("a")),
                  RawEvent(10800, "x", frozenset("a"))]
        taus = compute_inter_event_times(events)
        assert taus[1] == pytest.approx(1.0)
        assert taus[2] == pytest.approx(2.0)

    def test_zero_gap_clamped(self):
        events = [RawEvent(100, "x", frozenset("a")),
                  RawEvent(100, "y", frozenset("b"))]
        taus = compute_inter_event_times(events)
        assert taus[1] == pytest.approx(1.0 / 3600.0)

    def test_decreasing_errors(self):
        events = [RawEvent(200, "x", frozenset("a")),
                  RawEvent(100, "x", frozenset("a"))]
        with pytest.raises(DataError):
            compute_inter_event_times(events)

    def test_norm_stats_finite(self):
        import numpy as np
        rng = np.random.default_rng(0)
        taus = np.exp(rng.normal(size=500)).tolist()
        stats = data.norm_stats_from_taus(taus)
        assert stats.std_log_tau > 0
        assert abs(stats.mean_log_tau) < 0.2


class TestSplit:
    def make_events(self, n_weeks, per_week=10):
        events = []
        for w in range(n_weeks):
            for i in range(per_week):
                ts = w * 7 * 86400 + i * 3600
                events.append(data.Event(tau=1.0, sender_id=0, recipient_set_id=0,
                                         metadata_class=MetadataClass.OFFICE_HOURS,
                                         timestamp=ts))
        return events

    def test_10_weeks_6_2_2(self):
        splits = split_sequences(self.make_events(10), seed=42)
        assert len(splits["train"]) == 6
        assert len(splits["dev"]) == 2
        assert len(splits["test"]) == 2

    def test_reproducible(self):
        a = split_sequences(self.make_events(10), seed=7)
        b = split_sequences(self.make_events(10), seed=7)
        assert [[e.timestamp for e in s] for s in a["train"]] == \
               [[e.timestamp for e in s] for s in b["train"]]

    def test_bad_fractions_error(self):
        with pytest.raises(DataError):
            split_sequences(self.make_events(10), fractions=(0.5, 0.2, 0.2))

    def test_too_few_sequences_error(self):
        with pytest.raises(DataError):
            split_sequences(self.make_events(3))

    def test_first_tau_measured_from_window_start(self):
        splits = split_sequences(self.make_events(10), seed=0)
        for seqs in splits.values():
            for seq in seqs:
                offset = seq[0].timestamp % (7 * 86400)
                expected = max(offset / 3600.0, data.MIN_TAU_HOURS)
                assert seq[0].tau == pytest.approx(expected)


class TestIngest:
    def test_end_to_end(self, tmp_path):
        import numpy as np
        rng = np.random.default_rng(0)
        rows = []
        ts = 0
        people = ["a", "b", "c", "d"]
        for _ in range(600):
            ts += int(rng.exponential(7000)) + 1
            s = people[rng.integers(0, 4)]
            r = people[(people.index(s) + 1) % 4]
            rows.append("%d,%s,%s" % (ts, s, r))
        path = tmp_path / "log.csv"
        path.write_text("timestamp,sender,recipients\n" + "\n".join(rows),
                        encoding="utf-8")
        cfg = data.DatasetConfig(path=str(path))
        ds = data.ingest(cfg)
        assert set(ds.splits) == {"train", "dev", "test"}
        assert ds.norm.std_log_tau > 0
        total = sum(len(s) for seqs in ds.splits.values() for s in seqs)
        assert total == 600

    def test_config_file_round_trip(self, tmp_path):
        cfgfile = tmp_path / "ds.ini"
        cfgfile.write_text("path = data.csv\ntz_offset_minutes = 60\n"
                           "min_count = 10\nseq_len_days = 7\nsplit_seed = 3\n",
                           encoding="utf-8")
        cfg = data.DatasetConfig.from_file(str(cfgfile))
        assert cfg.tz_offset_minutes == 60
        assert cfg.min_count == 10
        assert cfg.split_seed == 3

    def test_unknown_config_key_rejected(self, tmp_path):
        cfgfile = tmp_path / "ds.ini"
        cfgfile.write_text("path = x.csv\nbogus = 1\n", encoding="utf-8")
        with pytest.raises(DataError, match="bogus"):
            data.DatasetConfig.from_file(str(cfgfile))
