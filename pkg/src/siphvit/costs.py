"""Energy and latency accounting over a schedule trace.

Energy is a linear sum of event counters times per-event constants. Latency is
the makespan of the trace re-timed under the table's durations, split into
optical / electronic / memory buckets by sweeping the timeline: every instant
is shared equally among the buckets busy at that instant, so the buckets add
up to the makespan.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .trace import ELECTRONIC_KINDS, MEMORY_KINDS, Event, ScheduleTrace, retime

ENERGY_COMPONENTS = ("tuning", "vcsel", "bpd", "adc", "dac", "memory", "electronic")
LATENCY_COMPONENTS = ("optical", "electronic", "memory", "idle")


@dataclass(frozen=True)
class CostTable:
    # energy per event, joules
    tune_per_mr_write: float = 0.25e-12
    tune_per_bank_event: float = 10e-12
    vcsel_per_symbol: float = 0.2e-12
    bpd_per_sample: float = 0.05e-12
    adc_per_conversion: float = 1.5e-12
    dac_per_conversion: float = 0.3e-12
    memory_per_byte: float = 0.4e-12
    electronic_per_op: float = 0.1e-12
    # latency per event, seconds
    tune_bank_time: float = 10e-9
    optical_cycle_time: float = 0.1e-9
    adc_time: float = 0.2e-9
    dac_time: float = 0.1e-9
    memory_access_time: float = 0.1e-9  # per burst
    memory_burst_bytes: int = 64
    electronic_op_time: float = 1e-12
    tuning_charge: str = "per_mr"  # or "per_bank"
    version: str = "illustrative-1"
    label: str = "illustrative calibration"

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and v < 0:
                raise ValueError(f"cost table entry {f.name} is negative")
        if self.memory_burst_bytes <= 0:
            raise ValueError("memory_burst_bytes must be positive")
        if self.tuning_charge not in ("per_mr", "per_bank"):
            raise ValueError("tuning_charge must be 'per_mr' or 'per_bank'")

    def duration(self, e: Event) -> float:
        k = e.kind
        if k == "tune":
            return e.tunes * self.tune_bank_time
        if k == "vvm_cycle":
            return e.cycles * (self.dac_time + self.optical_cycle_time + self.adc_time)
        if k in MEMORY_KINDS:
            return math.ceil(e.nbytes / self.memory_burst_bytes) * self.memory_access_time
        if k in ELECTRONIC_KINDS:
            return e.ops * self.electronic_op_time
        raise ValueError(f"unknown event kind {k!r}")

    def scaled(self, factor: float) -> "CostTable":
        """Every energy constant multiplied by ``factor`` (latencies unchanged)."""
        kw = {f.name: getattr(self, f.name) * factor for f in fields(self)
              if f.name.startswith(("tune_per", "vcsel", "bpd", "adc_per", "dac_per", "memory_per", "electronic_per"))}
        return replace(self, **kw)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "CostTable":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown cost table keys {sorted(unknown)}")
        if "version" not in d:
            raise ValueError("cost table must carry a version tag")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "CostTable":
        return cls.from_dict(json.loads(Path(path).read_text()))


DEFAULT_COST_TABLE = CostTable()


@dataclass
class EnergyReport:
    components: dict = field(default_factory=lambda: dict.fromkeys(ENERGY_COMPONENTS, 0.0))

    @property
    def total(self) -> float:
        return sum(self.components.values())

    @property
    def percentages(self) -> dict:
        t = self.total
        return {k: (100.0 * v / t if t else 0.0) for k, v in self.components.items()}

    def largest(self) -> str:
        return max(self.components, key=self.components.get)

    def to_dict(self) -> dict:
        return {"joules": dict(self.components), "total": self.total, "percent": self.percentages}


@dataclass
class LatencyReport:
    components: dict = field(default_factory=lambda: dict.fromkeys(LATENCY_COMPONENTS, 0.0))
    makespan: float = 0.0

    @property
    def total(self) -> float:
        return sum(self.components.values())

    def to_dict(self) -> dict:
        return {"seconds": dict(self.components), "total": self.total}


def event_energy(e: Event, table: CostTable) -> dict:
    k = e.kind
    out = {}
    if k == "tune":
        if table.tuning_charge == "per_mr":
            out["tuning"] = e.mr_writes * table.tune_per_mr_write
        else:
            out["tuning"] = e.tunes * table.tune_per_bank_event
        out["dac"] = e.dac * table.dac_per_conversion
    elif k == "vvm_cycle":
        out["vcsel"] = e.vcsel * table.vcsel_per_symbol
        out["bpd"] = e.bpd * table.bpd_per_sample
        out["adc"] = e.adc * table.adc_per_conversion
        out["dac"] = e.dac * table.dac_per_conversion
    elif k in MEMORY_KINDS:
        out["memory"] = e.nbytes * table.memory_per_byte
    elif k in ELECTRONIC_KINDS:
        out["electronic"] = e.ops * table.electronic_per_op
    else:
        raise ValueError(f"unknown event kind {k!r}")
    return out


def estimate_energy(trace: ScheduleTrace, table: CostTable = DEFAULT_COST_TABLE) -> EnergyReport:
    rep = EnergyReport()
    for e in trace.events:
        for comp, j in event_energy(e, table).items():
            rep.components[comp] += j
    return rep


def _bucket(e: Event) -> str:
    if e.resource == "MEM":
        return "memory"
    if e.resource == "ELEC":
        return "electronic"
    return "optical"


def estimate_latency(trace: ScheduleTrace, table: CostTable = DEFAULT_COST_TABLE) -> LatencyReport:
    if not trace.scheduled:
        raise ValueError("trace is unscheduled")
    timed = retime(trace, table.duration)
    rep = LatencyReport(makespan=timed.makespan)
    edges = []
    for e in timed.events:
        if e.end > e.start:
            b = _bucket(e)
            edges.append((e.start, 1, b))
            edges.append((e.end, -1, b))
    edges.sort(key=lambda t: (t[0], t[1]))
    active = dict.fromkeys(("optical", "electronic", "memory"), 0)
    t_prev = 0.0
    for t, step, b in edges:
        if t > t_prev:
            busy = [k for k, v in active.items() if v > 0]
            span = t - t_prev
            if busy:
                for k in busy:
                    rep.components[k] += span / len(busy)
            else:
                rep.components["idle"] += span
            t_prev = t
        active[b] += step
    return rep


def kfps_per_watt(energy_per_frame: float, latency_per_frame: float | None = None) -> float:
    """Frames per second per watt, in thousands: ``1 / (1000 * J per frame)``.

    Latency cancels out of (frames/s) / (J/s); it is accepted for symmetry.
    """
    if not energy_per_frame > 0:
        raise ValueError("energy per frame must be positive")
    if latency_per_frame is not None and not latency_per_frame > 0:
        raise ValueError("latency per frame must be positive")
    return 1.0 / (1000.0 * energy_per_frame)


def savings(report_masked, report_full) -> float:
    return 1.0 - report_masked.total / report_full.total


def long_format_rows(label: dict, energy: EnergyReport, latency: LatencyReport | None = None) -> list[dict]:
    rows = []
    for comp in ENERGY_COMPONENTS:
        rows.append({**label, "metric": "energy", "component": comp, "value": energy.components[comp], "unit": "J"})
    rows.append({**label, "metric": "energy", "component": "total", "value": energy.total, "unit": "J"})
    if latency is not None:
        for comp in LATENCY_COMPONENTS:
            rows.append({**label, "metric": "latency", "component": comp, "value": latency.components[comp], "unit": "s"})
        rows.append({**label, "metric": "latency", "component": "total", "value": latency.total, "unit": "s"})
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
