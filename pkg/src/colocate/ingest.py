"""
Cluster-trace ingestion: CSV parsing, cleanup of failing / idle tasks,
clamping of out-of-range records and construction of per-task profiles.

Canonical usage CSV columns: ``task_id,interval_index,inst_usage,avg_usage``.
From a Google cluster trace v2.1 ``task_usage`` table these map as
task_id = ``job ID`` + ``-`` + ``task index``, interval_index = ``start time``
divided by the 300 s reporting period, inst_usage = ``sampled CPU usage`` and
avg_usage = ``CPU rate``. Events CSV columns: ``task_id,event_code``
(``event type`` of the ``task_events`` table).
"""
from __future__ import annotations

import csv
import io
import logging
from contextlib import contextmanager
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import IO, Iterable

import numpy as np

from . import stats
from .stats import EmpiricalDistribution

log = logging.getLogger(__name__)

USAGE_COLUMNS = ("task_id", "interval_index", "inst_usage", "avg_usage")
EVENT_COLUMNS = ("task_id", "event_code")
PROFILE_COLUMNS = ("task_id", "duration_records", "mu", "sigma")

EVICT, FAIL, FINISH, KILL, LOST = 2, 3, 4, 5, 6
FAILING_EVENT_CODES = frozenset({EVICT, FAIL, KILL, LOST})
KNOWN_EVENT_CODES = frozenset(range(9))

LONG_TASK_RECORDS = 24


class TraceFormatError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class UsageRecord:
    task_id: str
    interval_index: int
    inst_usage: float
    avg_usage: float


@dataclass(frozen=True)
class EventRecord:
    task_id: str
    event_code: int


@dataclass(frozen=True, eq=False)
class TaskProfile:
    task_id: str
    inst: EmpiricalDistribution
    avg: EmpiricalDistribution
    mu: float = field(init=False)
    sigma: float = field(init=False)
    histogram: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.inst) != len(self.avg):
            raise ValueError("inst and avg must have the same number of records")
        object.__setattr__(self, "mu", stats.mean(self.inst))
        object.__setattr__(self, "sigma", stats.std_dev(self.inst))
        object.__setattr__(self, "histogram", stats.histogram(self.inst))

    @property
    def duration_records(self) -> int:
        return len(self.inst)

    @classmethod
    def from_samples(cls, task_id, inst, avg=None) -> "TaskProfile":
        inst = EmpiricalDistribution(inst)
        avg = inst if avg is None else EmpiricalDistribution(avg)
        return cls(str(task_id), inst, avg)


@contextmanager
def _open_text(source):
    if isinstance(source, (bytes, bytearray)):
        yield io.StringIO(source.decode("utf-8"))
    elif isinstance(source, io.TextIOBase):
        yield source
    elif hasattr(source, "read"):
        yield io.TextIOWrapper(source, encoding="utf-8", newline="")
    else:
        with open(source, encoding="utf-8", newline="") as fh:
            yield fh


def _rows(source, columns):
    """Yield (line_number, row) after validating the header."""
    header = None
    with _open_text(source) as fh:
        for line_no, line in enumerate(fh, start=1):
            if line.startswith("#") or not line.strip():
                continue
            row = next(csv.reader([line]))
            if header is None:
                header = tuple(h.strip() for h in row)
                if header != columns:
                    raise TraceFormatError(
                        f"expected header {','.join(columns)}, got {','.join(header)}", line=line_no)
                continue
            yield line_no, row
    if header is None:
        raise TraceFormatError("missing header row", line=1)


def parse_usage_csv(source) -> list[UsageRecord]:
    """Parse a usage CSV (path, byte string or binary/text stream)."""
    records = []
    for line, row in _rows(source, USAGE_COLUMNS):
        if len(row) != 4:
            raise TraceFormatError(f"expected 4 fields, got {len(row)}", line=line)
        task_id, interval, inst, avg = (f.strip() for f in row)
        try:
            rec = UsageRecord(task_id, int(interval), float(inst), float(avg))
        except ValueError as exc:
            raise TraceFormatError(f"malformed value ({exc})", line=line) from None
        if not task_id:
            raise TraceFormatError("empty task_id", line=line)
        if rec.interval_index < 0:
            raise TraceFormatError("negative interval_index", line=line)
        if not (rec.inst_usage >= 0 and rec.avg_usage >= 0):
            raise TraceFormatError("negative or NaN usage", line=line)
        records.append(rec)
    return records


def parse_events_csv(source) -> list[EventRecord]:
    events = []
    for line, row in _rows(source, EVENT_COLUMNS):
        if len(row) != 2:
            raise TraceFormatError(f"expected 2 fields, got {len(row)}", line=line)
        try:
            ev = EventRecord(row[0].strip(), int(row[1]))
        except ValueError as exc:
            raise TraceFormatError(f"malformed value ({exc})", line=line) from None
        if ev.event_code not in KNOWN_EVENT_CODES:
            raise TraceFormatError(f"unknown event code {ev.event_code}", line=line)
        events.append(ev)
    return events


def filter_failing_tasks(records: Iterable[UsageRecord], events: Iterable[EventRecord]) -> list[UsageRecord]:
    failing = {e.task_id for e in events if e.event_code in FAILING_EVENT_CODES}
    return [r for r in records if r.task_id not in failing]


def drop_zero_usage_tasks(records: Iterable[UsageRecord]) -> list[UsageRecord]:
    records = list(records)
    busy = {r.task_id for r in records if r.inst_usage > 0}
    return [r for r in records if r.task_id in busy]


def clamp_invalid(records: Iterable[UsageRecord]) -> tuple[list[UsageRecord], int]:
    """
    Repair out-of-range records.

    avg > 1 is replaced by the record's inst value; inst > 1 is clamped to 1
    (with a warning, the reference data never had such values).
    """
    out, replaced = [], 0
    for r in records:
        fixed = r
        if fixed.inst_usage > 1:
            log.warning("task %s interval %d: inst_usage %.6g > 1 clamped to 1",
                        r.task_id, r.interval_index, r.inst_usage)
            fixed = replace(fixed, inst_usage=1.0)
        if fixed.avg_usage > 1:
            fixed = replace(fixed, avg_usage=fixed.inst_usage)
        if fixed is not r:
            replaced += 1
        out.append(fixed)
    return out, replaced


def build_profile(task_id, records: Iterable[UsageRecord]) -> TaskProfile:
    recs = sorted(records, key=lambda r: r.interval_index)
    if not recs:
        raise TraceFormatError(f"task {task_id}: no records")
    inst = np.fromiter((r.inst_usage for r in recs), float, len(recs))
    avg = np.fromiter((r.avg_usage for r in recs), float, len(recs))
    return TaskProfile.from_samples(task_id, inst, avg)


def build_profiles(records: Iterable[UsageRecord]) -> list[TaskProfile]:
    """Group records by task (first-appearance order) and build one profile per task."""
    groups: OrderedDict[str, list] = OrderedDict()
    for r in records:
        groups.setdefault(r.task_id, []).append(r)
    return [build_profile(tid, recs) for tid, recs in groups.items()]


def partition_by_duration(profiles: Iterable[TaskProfile], threshold_records: int = LONG_TASK_RECORDS):
    long, short = [], []
    for p in profiles:
        (long if p.duration_records >= threshold_records else short).append(p)
    return long, short


def preprocess(records, events=(), threshold_records: int = LONG_TASK_RECORDS, include_short: bool = False):
    """Full cleanup pipeline. Returns (profiles, summary counters)."""
    records = list(records)
    n_in = len({r.task_id for r in records})
    records = filter_failing_tasks(records, events)
    n_ok = len({r.task_id for r in records})
    records = drop_zero_usage_tasks(records)
    n_busy = len({r.task_id for r in records})
    records, replaced = clamp_invalid(records)
    long, short = partition_by_duration(build_profiles(records), threshold_records)
    summary = {
        "tasks_in": n_in,
        "failing_dropped": n_in - n_ok,
        "zero_usage_dropped": n_ok - n_busy,
        "records_clamped": replaced,
        "long": len(long),
        "short": len(short),
    }
    return (long + short if include_short else long), summary


def write_usage_csv(profiles: Iterable[TaskProfile], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(USAGE_COLUMNS)
    for p in profiles:
        for t, (x, y) in enumerate(zip(p.inst.samples, p.avg.samples)):
            w.writerow((p.task_id, t, repr(float(x)), repr(float(y))))


def write_profile_summary(profiles: Iterable[TaskProfile], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(PROFILE_COLUMNS)
    for p in profiles:
        w.writerow((p.task_id, p.duration_records, repr(p.mu), repr(p.sigma)))
