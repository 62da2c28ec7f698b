"""Event-log ingestion: parsing, metadata classes, recipient vocabulary,
inter-arrival times and the train/dev/test sequence split."""

from __future__ import annotations

import configparser
import csv
import json
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

SECONDS_PER_HOUR = 3600.0
MIN_TAU_HOURS = 1.0 / 3600.0  # zero gaps clamped to one second


class DataError(Exception):
    """Raised for malformed or unusable input data."""


class MetadataClass(Enum):
    OFFICE_HOURS = 0
    SHOULDER = 1
    NON_WORKING = 2


METADATA_NAMES = {
    MetadataClass.OFFICE_HOURS: "office",
    MetadataClass.SHOULDER: "shoulder",
    MetadataClass.NON_WORKING: "nonwork",
}
METADATA_BY_NAME = {v: k for k, v in METADATA_NAMES.items()}


@dataclass(frozen=True)
class RawEvent:
    timestamp: int
    sender: str
    recipients: frozenset

    def __post_init__(self):
        if not self.recipients:
            raise DataError("empty recipient set")


@dataclass(frozen=True)
class Event:
    tau: float                 # inter-arrival time, hours
    sender_id: int
    recipient_set_id: int
    metadata_class: MetadataClass
    timestamp: int = 0


@dataclass
class RecipientVocabulary:
    sets: list                         # ordered list of frozensets
    index: dict = field(default_factory=dict)
    min_count: int = 1
    dropped_event_count: int = 0

    def __post_init__(self):
        if not self.index:
            self.index = {s: i for i, s in enumerate(self.sets)}

    def __len__(self):
        return len(self.sets)

    def to_jsonable(self):
        return {
            "sets": [sorted(s) for s in self.sets],
            "min_count": self.min_count,
            "dropped_event_count": self.dropped_event_count,
        }

    @classmethod
    def from_jsonable(cls, obj):
        sets = [frozenset(s) for s in obj["sets"]]
        return cls(sets=sets, min_count=obj["min_count"],
                   dropped_event_count=obj["dropped_event_count"])


@dataclass
class NormStats:
    mean_log_tau: float
    std_log_tau: float

    def __post_init__(self):
        if not self.std_log_tau > 0:
            raise DataError("std_log_tau must be positive")

    def normalize(self, log_tau):
        return (log_tau - self.mean_log_tau) / self.std_log_tau


def _parse_recipients(text):
    parts = [p.strip() for p in text.split(";")]
    return frozenset(p for p in parts if p)


def parse_event_log(path, fmt="csv"):
    """Parse a CSV or JSONL log into sorted, deduplicated RawEvents.

    Returns (events, dropped_self_sends, dropped_duplicates).
    Self-recipients are removed from each recipient set; rows whose only
    recipient is the sender are dropped entirely.
    """
    rows = []
    if fmt == "csv":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise DataError("%s: empty file" % path)
            missing = {"timestamp", "sender", "recipients"} - set(reader.fieldnames)
            if missing:
                raise DataError("%s: missing columns %s" % (path, sorted(missing)))
            for lineno, row in enumerate(reader, start=2):
                try:
                    rows.append((int(row["timestamp"]), row["sender"].strip(),
                                 _parse_recipients(row["recipients"])))
                except (KeyError, ValueError, AttributeError) as exc:
                    raise DataError("%s: malformed row at line %d: %s"
                                    % (path, lineno, exc)) from exc
    elif fmt == "jsonl":
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                    recips = obj["recipients"]
                    if isinstance(recips, str):
                        recips = _parse_recipients(recips)
                    else:
                        recips = frozenset(str(r) for r in recips)
                    rows.append((int(obj["timestamp"]), str(obj["sender"]), recips))
                except (KeyError, ValueError, TypeError) as exc:
                    raise DataError("%s: malformed row at line %d: %s"
                                    % (path, lineno, exc)) from exc
    else:
        raise DataError("unknown log format %r" % fmt)

    if not rows:
        raise DataError("%s: no events" % path)

    rows.sort(key=lambda r: (r[0], r[1], tuple(sorted(r[2]))))
    events = []
    seen = set()
    dropped_self = 0
    dropped_dup = 0
    for ts, sender, recipients in rows:
        recipients = recipients - {sender}
        if not recipients:
            dropped_self += 1
            continue
        key = (ts, sender, recipients)
        if key in seen:
            dropped_dup += 1
            continue
        seen.add(key)
        events.append(RawEvent(ts, sender, recipients))
    if not events:
        raise DataError("%s: all rows dropped" % path)
    return events, dropped_self, dropped_dup


def derive_metadata_class(timestamp, tz_offset_minutes=0):
    """Coarse time-of-week label in local time.

    Weekday 09:00-16:59 is office hours, weekday 06:00-08:59 and
    17:00-21:59 is the shoulder period, everything else (nights and
    weekends) is non-working.
    """
    local = int(timestamp) + tz_offset_minutes * 60
    # epoch (1970-01-01) was a Thursday; 0=Monday
    day = ((local // 86400) % 7 + 3) % 7
    hour = (local % 86400) // 3600
    if day >= 5:
        return MetadataClass.NON_WORKING
    if 9 <= hour < 17:
        return MetadataClass.OFFICE_HOURS
    if 6 <= hour < 9 or 17 <= hour < 22:
        return MetadataClass.SHOULDER
    return MetadataClass.NON_WORKING


def build_recipient_vocab(events, min_count=1):
    """Drop rare recipient sets and index the rest by descending frequency.

    Returns (vocab, kept_events).
    """
    if not events:
        raise DataError("no events")
    counts = {}
    for ev in events:
        counts[ev.recipients] = counts.get(ev.recipients, 0) + 1
    kept_sets = [s for s, c in counts.items() if c >= min_count]
    if not kept_sets:
        raise DataError("vocabulary empty after min_count=%d filtering" % min_count)
    kept_sets.sort(key=lambda s: (-counts[s], tuple(sorted(s))))
    kept_events = [ev for ev in events if ev.recipients in set(kept_sets)]
    vocab = RecipientVocabulary(
        sets=kept_sets, min_count=min_count,
        dropped_event_count=len(events) - len(kept_events))
    return vocab, kept_events


def compute_inter_event_times(events):
    """Inter-arrival times in hours; the first tau is 0-clamped to 1 s."""
    taus = []
    prev = None
    for ev in events:
        if prev is not None and ev.timestamp < prev:
            raise DataError("timestamps decrease at %d" % ev.timestamp)
        gap = 0.0 if prev is None else (ev.timestamp - prev) / SECONDS_PER_HOUR
        taus.append(max(gap, MIN_TAU_HOURS))
        prev = ev.timestamp
    return taus


def norm_stats_from_taus(taus):
    logs = np.log(np.asarray(taus, dtype=np.float64))
    std = float(logs.std())
    return NormStats(mean_log_tau=float(logs.mean()), std_log_tau=max(std, 1e-6))


def build_sender_vocab(events):
    """Index all network nodes (senders plus recipient-only members) by
    descending send frequency; recipient-only nodes count as zero."""
    counts = {}
    for ev in events:
        counts[ev.sender] = counts.get(ev.sender, 0) + 1
        for r in ev.recipients:
            counts.setdefault(r, 0)
    senders = sorted(counts, key=lambda s: (-counts[s], s))
    return senders, {s: i for i, s in enumerate(senders)}


def events_from_raw(raw_events, sender_index, vocab, tz_offset_minutes=0):
    """Attach ids, metadata classes and inter-arrival times to raw events."""
    taus = compute_inter_event_times(raw_events)
    out = []
    for raw, tau in zip(raw_events, taus):
        out.append(Event(
            tau=tau,
            sender_id=sender_index[raw.sender],
            recipient_set_id=vocab.index[raw.recipients],
            metadata_class=derive_metadata_class(raw.timestamp, tz_offset_minutes),
            timestamp=raw.timestamp,
        ))
    return out


def split_sequences(events, seq_len_days=7, fractions=(0.6, 0.2, 0.2),
                    seed=0, min_events_per_window=0):
    """Segment a sorted event stream into fixed-length windows and assign
    the windows to train/dev/test by a seeded random permutation."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError("split fractions must sum to 1")
    if not events:
        raise DataError("no events to split")
    window = seq_len_days * 86400
    start = events[0].timestamp
    buckets = {}
    for ev in events:
        buckets.setdefault((ev.timestamp - start) // window, []).append(ev)
    sequences = []
    for k in sorted(buckets):
        seq = buckets[k]
        # first event of a sequence carries tau from the window start
        window_start = start + k * window
        first_tau = max((seq[0].timestamp - window_start) / SECONDS_PER_HOUR,
                        MIN_TAU_HOURS)
        seq[0] = replace(seq[0], tau=first_tau)
        sequences.append(seq)
    if min_events_per_window > 0:
        sequences = [s for s in sequences if len(s) >= min_events_per_window]
    if len(sequences) < 5:
        raise DataError("need at least 5 sequences, got %d" % len(sequences))

    n = len(sequences)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_dev = int(round(fractions[1] * n))
    n_train = min(n_train, n - 2)
    n_dev = min(n_dev, n - n_train - 1)
    train_ix = set(order[:n_train])
    dev_ix = set(order[n_train:n_train + n_dev])
    splits = {"train": [], "dev": [], "test": []}
    for i, seq in enumerate(sequences):
        if i in train_ix:
            splits["train"].append(seq)
        elif i in dev_ix:
            splits["dev"].append(seq)
        else:
            splits["test"].append(seq)
    return splits


@dataclass
class DatasetConfig:
    path: str = ""
    fmt: str = "csv"
    tz_offset_minutes: int = 0
    min_count: int = 1
    seq_len_days: int = 7
    split_seed: int = 0
    min_events_per_window: int = 0

    @classmethod
    def from_file(cls, path):
        parser = configparser.ConfigParser()
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        if not text.lstrip().startswith("["):
            text = "[dataset]\n" + text
        parser.read_string(text)
        section = parser["dataset"] if parser.has_section("dataset") else parser[parser.sections()[0]]
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(section) - known
        if unknown:
            raise DataError("unknown dataset config keys: %s" % sorted(unknown))
        kwargs = {}
        for key in section:
            raw = section[key]
            typ = cls.__dataclass_fields__[key].type
            kwargs[key] = int(raw) if typ == "int" else raw
        return cls(**kwargs)


@dataclass
class Dataset:
    """Fully ingested dataset: vocabularies, splits and normalization."""
    senders: list
    sender_index: dict
    vocab: RecipientVocabulary
    splits: dict                 # name -> list of event sequences
    norm: NormStats              # computed on the train split only
    tz_offset_minutes: int = 0


def ingest(cfg: DatasetConfig):
    """Run the full ingestion pipeline from a dataset config."""
    raw, _, _ = parse_event_log(cfg.path, cfg.fmt)
    vocab, kept = build_recipient_vocab(raw, cfg.min_count)
    senders, sender_index = build_sender_vocab(kept)
    events = events_from_raw(kept, sender_index, vocab, cfg.tz_offset_minutes)
    splits = split_sequences(events, cfg.seq_len_days, seed=cfg.split_seed,
                             min_events_per_window=cfg.min_events_per_window)
    train_taus = [ev.tau for seq in splits["train"] for ev in seq]
    norm = norm_stats_from_taus(train_taus)
    return Dataset(senders=senders, sender_index=sender_index, vocab=vocab,
                   splits=splits, norm=norm,
                   tz_offset_minutes=cfg.tz_offset_minutes)
