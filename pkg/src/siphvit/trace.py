"""Schedule trace: timestamped events over optical cores, the electronic unit
and buffer memory.

Optical cores execute their events strictly in issue order, because the weight
bank state is sequential. ``MEM`` and ``ELEC`` are stateless, so an event may
fill any idle gap long enough to hold it.
"""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field
from typing import Callable, Iterable

OPTICAL_KINDS = ("tune", "vvm_cycle")
ELECTRONIC_KINDS = ("softmax", "gelu", "layernorm", "add", "matmul")
MEMORY_KINDS = ("read", "write")
KINDS = OPTICAL_KINDS + ELECTRONIC_KINDS + MEMORY_KINDS
SHARED_RESOURCES = ("MEM", "ELEC")

COUNT_FIELDS = ("cycles", "tunes", "mr_writes", "adc", "dac", "vcsel", "bpd", "nbytes", "ops")


class Event:
    __slots__ = ("id", "resource", "kind", "start", "end", "deps", "tag") + COUNT_FIELDS

    def __init__(self, id, resource, kind, deps=(), tag="", start=None, end=None, **counts):
        if kind not in KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        self.id = id
        self.resource = resource
        self.kind = kind
        self.deps = tuple(deps)
        self.tag = tag
        self.start = start
        self.end = end
        for f in COUNT_FIELDS:
            setattr(self, f, counts.pop(f, 0))
        if counts:
            raise TypeError(f"unknown event counters {sorted(counts)}")

    @property
    def duration(self) -> float:
        return self.end - self.start

    def to_dict(self) -> dict:
        d = {"id": self.id, "resource": self.resource, "kind": self.kind,
             "start": self.start, "end": self.end, "deps": list(self.deps)}
        if self.tag:
            d["tag"] = self.tag
        for f in COUNT_FIELDS:
            v = getattr(self, f)
            if v:
                d[f] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Event":
        d = dict(d)
        return cls(d.pop("id"), d.pop("resource"), d.pop("kind"), d.pop("deps", ()),
                   d.pop("tag", ""), d.pop("start", None), d.pop("end", None), **d)

    def __repr__(self):
        return f"Event({self.id}, {self.resource}, {self.kind}, {self.start}->{self.end})"


@dataclass
class ScheduleTrace:
    events: list[Event] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    @property
    def makespan(self) -> float:
        return max((e.end for e in self.events), default=0.0)

    @property
    def scheduled(self) -> bool:
        return all(e.start is not None and e.end is not None for e in self.events)

    def counts(self, kind: str | None = None, tag_prefix: str | None = None) -> dict:
        tot = dict.fromkeys(COUNT_FIELDS, 0)
        for e in self.events:
            if kind is not None and e.kind != kind:
                continue
            if tag_prefix is not None and not e.tag.startswith(tag_prefix):
                continue
            for f in COUNT_FIELDS:
                tot[f] += getattr(e, f)
        return tot

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"metadata": self.metadata}, sort_keys=True) + "\n")
            for e in self.events:
                fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def read_jsonl(cls, path) -> "ScheduleTrace":
        trace = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                if "metadata" in rec and "kind" not in rec:
                    trace.metadata = rec["metadata"]
                else:
                    trace.events.append(Event.from_dict(rec))
        return trace


class _Timeline:
    """Busy intervals of one resource, merged when they touch."""

    def __init__(self, in_order: bool):
        self.in_order = in_order
        self.starts: list[float] = []
        self.ends: list[float] = []

    def place(self, ready: float, dur: float) -> float:
        if self.in_order or not self.starts:
            t = max(ready, self.ends[-1]) if self.starts else ready
        else:
            i = max(bisect.bisect_right(self.starts, ready) - 1, 0)
            t = ready
            while i < len(self.starts):
                if self.ends[i] <= t:
                    i += 1
                    continue
                if t + dur <= self.starts[i]:
                    break
                t = max(t, self.ends[i])
                i += 1
        self._insert(t, t + dur)
        return t

    def _insert(self, s: float, e: float) -> None:
        if e == s:
            return
        i = bisect.bisect_left(self.starts, s)
        if i > 0 and self.ends[i - 1] >= s:
            i -= 1
            self.ends[i] = max(self.ends[i], e)
        else:
            self.starts.insert(i, s)
            self.ends.insert(i, e)
        while i + 1 < len(self.starts) and self.starts[i + 1] <= self.ends[i]:
            self.ends[i] = max(self.ends[i], self.ends.pop(i + 1))
            self.starts.pop(i + 1)


class Scheduler:
    """ASAP list scheduler: an event starts once its dependencies have ended and
    its resource is free."""

    def __init__(self, duration: Callable[[Event], float], metadata: dict | None = None):
        self.duration = duration
        self.trace = ScheduleTrace(metadata=dict(metadata or {}))
        self._lines: dict[str, _Timeline] = {}

    def add(self, resource: str, kind: str, deps: Iterable[int] = (), tag: str = "", **counts) -> int:
        ev = Event(len(self.trace.events), resource, kind, deps, tag, **counts)
        self._place(ev)
        self.trace.events.append(ev)
        return ev.id

    def _place(self, ev: Event) -> None:
        events = self.trace.events
        ready = max((events[d].end for d in ev.deps), default=0.0)
        line = self._lines.get(ev.resource)
        if line is None:
            line = self._lines[ev.resource] = _Timeline(ev.resource not in SHARED_RESOURCES)
        dur = float(self.duration(ev))
        ev.start = line.place(ready, dur)
        ev.end = ev.start + dur

    def end_of(self, ids: Iterable[int]) -> float:
        return max((self.trace.events[i].end for i in ids), default=0.0)


def retime(trace: ScheduleTrace, duration: Callable[[Event], float]) -> ScheduleTrace:
    """Re-run the schedule of ``trace`` (same issue order and dependencies) with
    new per-event durations."""
    sched = Scheduler(duration, trace.metadata)
    for e in trace.events:
        ev = Event(e.id, e.resource, e.kind, e.deps, e.tag,
                   **{f: getattr(e, f) for f in COUNT_FIELDS})
        if any(d >= ev.id for d in ev.deps):
            raise ValueError(f"event {ev.id} depends on a later event")
        sched._place(ev)
        sched.trace.events.append(ev)
    return sched.trace


def validate_trace(trace: ScheduleTrace) -> list[str]:
    """Problems found in ``trace``; empty when it is a valid schedule."""
    problems = []
    by_res: dict[str, list[Event]] = {}
    events = trace.events
    for i, e in enumerate(events):
        if e.id != i:
            problems.append(f"event at position {i} has id {e.id}")
        if e.start is None or e.end is None:
            problems.append(f"event {e.id} is unscheduled")
            continue
        if e.end < e.start:
            problems.append(f"event {e.id} ends before it starts")
        for d in e.deps:
            if d >= e.id or d < 0:
                problems.append(f"event {e.id} depends on non-earlier event {d}")
            elif events[d].end > e.start:
                problems.append(f"event {e.id} starts at {e.start} before dependency {d} ends at {events[d].end}")
        by_res.setdefault(e.resource, []).append(e)
    for res, evs in by_res.items():
        evs = sorted((e for e in evs if e.end > e.start), key=lambda e: (e.start, e.end))
        for a, b in zip(evs, evs[1:]):
            if b.start < a.end:
                problems.append(f"{res}: events {a.id} and {b.id} overlap")
    return problems
