"""Synthetic microburst traffic.

A two-state (Burst/Idle) Markov source alternates dwell times drawn from
the configured distributions. Packets arrive as a Poisson process whose
rate depends on the current state, and each switch's queue follows a fluid
model: it grows at ``queue_build_rate`` during a burst, drains at
``queue_drain_rate`` otherwise, clamped to ``[0, queue_cap_us]``. Queue
occupancy is expressed in microseconds of drain time.

The shipped presets are synthetic. They are tuned (see ``calibrate`` and
README) so that web stays under a 175 us queue ceiling and cache bursts are
longer and build deeper queues than web.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .int_wire import U32, FlowKey, HopMetadata, pack_ports

DEFAULT_FLOW = FlowKey(0x0A000001, 0x0A000002, 5000, 80, 17)


@dataclass(frozen=True)
class DwellDist:
    """Dwell-time distribution in microseconds."""

    kind: str = "lognormal"
    mean_us: float = 100.0
    sigma: float = 1.0
    table: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("lognormal", "exponential", "empirical"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "empirical" and not self.table:
            raise ValueError("empirical distribution needs a non-empty table")
        if self.mean_us <= 0 and self.kind != "empirical":
            raise ValueError("mean_us must be positive")

    def sample(self, rng: random.Random) -> float:
        if self.kind == "lognormal":
            mu = math.log(self.mean_us) - self.sigma**2 / 2
            return rng.lognormvariate(mu, self.sigma)
        if self.kind == "exponential":
            return rng.expovariate(1.0 / self.mean_us)
        return self.table[rng.randrange(len(self.table))]

    @property
    def mean(self) -> float:
        if self.kind == "empirical":
            return sum(self.table) / len(self.table)
        return self.mean_us


@dataclass(frozen=True)
class BurstModelParams:
    burst_duration: DwellDist
    inter_burst: DwellDist
    packet_rate_burst: float  # packets/s
    packet_rate_idle: float  # packets/s
    queue_build_rate: float  # us of occupancy per us in Burst
    queue_drain_rate: float  # us per us in Idle
    queue_cap_us: float
    base_latency_ns: int = 800
    seed: int = 1
    n_hops: int = 1
    flow_key: FlowKey = DEFAULT_FLOW

    def __post_init__(self):
        for name in ("packet_rate_burst", "packet_rate_idle", "queue_build_rate", "queue_drain_rate", "queue_cap_us"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.packet_rate_burst + self.packet_rate_idle <= 0:
            raise ValueError("at least one packet rate must be positive")
        if self.n_hops < 1:
            raise ValueError("n_hops must be >= 1")


@dataclass(frozen=True)
class WorkloadPreset:
    name: str
    params: BurstModelParams


# Synthetic defaults, not measured values. Rerun `int-forge calibrate` after editing.
PRESETS: dict[str, WorkloadPreset] = {
    "web": WorkloadPreset(
        "web",
        BurstModelParams(
            burst_duration=DwellDist("lognormal", 40.0, 0.8),
            inter_burst=DwellDist("lognormal", 400.0, 1.0),
            packet_rate_burst=60_000,
            packet_rate_idle=6_000,
            queue_build_rate=2.5,
            queue_drain_rate=1.0,
            queue_cap_us=170.0,
        ),
    ),
    "cache": WorkloadPreset(
        "cache",
        BurstModelParams(
            burst_duration=DwellDist("lognormal", 90.0, 0.9),
            inter_burst=DwellDist("lognormal", 300.0, 1.0),
            packet_rate_burst=40_000,
            packet_rate_idle=4_000,
            queue_build_rate=2.5,
            queue_drain_rate=1.0,
            queue_cap_us=400.0,
        ),
    ),
    "hadoop": WorkloadPreset(
        "hadoop",
        BurstModelParams(
            burst_duration=DwellDist("lognormal", 120.0, 1.2),
            inter_burst=DwellDist("lognormal", 250.0, 1.2),
            packet_rate_burst=50_000,
            packet_rate_idle=5_000,
            queue_build_rate=2.0,
            queue_drain_rate=1.0,
            queue_cap_us=500.0,
        ),
    ),
}


def get_preset(name: str, overrides: dict | None = None) -> WorkloadPreset:
    """Look up a preset, optionally overriding parameters (e.g. from a config document)."""
    try:
        preset = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    if not overrides:
        return preset
    kw = dict(overrides)
    for key in ("burst_duration", "inter_burst"):
        if key in kw and isinstance(kw[key], dict):
            d = dict(kw[key])
            if "table" in d:
                d["table"] = tuple(d["table"])
            kw[key] = replace(getattr(preset.params, key), **d)
    if "flow_key" in kw and not isinstance(kw["flow_key"], FlowKey):
        kw["flow_key"] = FlowKey(*kw["flow_key"])
    return WorkloadPreset(name, replace(preset.params, **kw))


@dataclass(frozen=True, slots=True)
class TraceRecord:
    ts: int  # ns since trace start
    flow_key: FlowKey
    hops: tuple[HopMetadata, ...]  # path order, first hop first

    @property
    def queue_occupancy(self) -> int:
        return self.hops[-1].queue_occupancy or 0


class _BurstQueue:
    """One switch queue driven by its own Burst/Idle process."""

    def __init__(self, params: BurstModelParams, rng: random.Random):
        self.p = params
        self.rng = rng
        self.burst = False
        self.t = 0.0
        self.q = 0.0
        self.state_end = params.inter_burst.sample(rng)

    def _integrate(self, dt: float) -> None:
        p = self.p
        if self.burst:
            self.q = min(p.queue_cap_us, self.q + p.queue_build_rate * dt)
        else:
            self.q = max(0.0, self.q - p.queue_drain_rate * dt)

    def flip(self) -> None:
        self._integrate(self.state_end - self.t)
        self.t = self.state_end
        self.burst = not self.burst
        dist = self.p.burst_duration if self.burst else self.p.inter_burst
        self.state_end = self.t + dist.sample(self.rng)

    def advance(self, t: float) -> float:
        while t >= self.state_end:
            self.flip()
        self._integrate(t - self.t)
        self.t = t
        return self.q


def generate_trace(preset: WorkloadPreset | BurstModelParams, n_packets: int, seed: int | None = None) -> list[TraceRecord]:
    """Generate ``n_packets`` records; identical seeds give identical traces."""
    if n_packets < 1:
        raise ValueError("n_packets must be >= 1")
    p = preset.params if isinstance(preset, WorkloadPreset) else preset
    rng = random.Random(p.seed if seed is None else seed)
    queues = [_BurstQueue(p, rng)]
    queues += [_BurstQueue(p, random.Random(rng.getrandbits(64))) for _ in range(p.n_hops - 1)]
    lead = queues[0]
    ports = pack_ports(1, 2)
    idle_util = int(1000 * p.packet_rate_idle / max(p.packet_rate_burst, p.packet_rate_idle))
    busy_util = int(1000 * p.packet_rate_burst / max(p.packet_rate_burst, p.packet_rate_idle))
    fk = p.flow_key

    out = []
    t = 0.0
    for _ in range(n_packets):
        ts = int(round(t * 1000))
        hops = []
        for i, queue in enumerate(queues):
            occ = int(queue.advance(t))
            latency = p.base_latency_ns + int(queue.q * 1000)
            hops.append(
                HopMetadata(
                    switch_id=i + 1,
                    port_ids=ports,
                    hop_latency=latency & U32,
                    queue_occupancy=occ,
                    ingress_timestamp=ts & U32,
                    egress_timestamp=(ts + latency) & U32,
                    queue_congestion_status=int(queue.q >= 0.9 * p.queue_cap_us) if p.queue_cap_us else 0,
                    egress_port_tx_utilization=busy_util if queue.burst else idle_util,
                )
            )
        out.append(TraceRecord(ts, fk, tuple(hops)))

        # next arrival: Poisson at the lead queue's current rate, re-drawn at state changes
        while True:
            rate = (p.packet_rate_burst if lead.burst else p.packet_rate_idle) / 1e6  # per us
            gap = rng.expovariate(rate) if rate > 0 else math.inf
            if t + gap < lead.state_end:
                t += gap
                break
            t = lead.state_end
            lead.advance(t)
    return out


# -- trace files (JSON lines) -------------------------------------------------


class TraceFormatError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def record_to_json(rec: TraceRecord) -> str:
    fk = rec.flow_key
    return json.dumps(
        {
            "ts": rec.ts,
            "flow": [fk.src_ip, fk.dst_ip, fk.src_port, fk.dst_port, fk.proto],
            "hops": [h.as_dict() for h in rec.hops],
        },
        separators=(",", ":"),
    )


def record_from_json(line: str) -> TraceRecord:
    d = json.loads(line)
    return TraceRecord(d["ts"], FlowKey(*d["flow"]), tuple(HopMetadata(**h) for h in d["hops"]))


def write_trace(records: Iterable[TraceRecord], path: str | Path) -> int:
    n = 0
    last = None
    with open(path, "w") as f:
        for rec in records:
            if last is not None and rec.ts < last:
                raise ValueError(f"record {n} goes back in time ({rec.ts} < {last})")
            last = rec.ts
            f.write(record_to_json(rec))
            f.write("\n")
            n += 1
    return n


def read_trace(path: str | Path) -> list[TraceRecord]:
    out = []
    last = None
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = record_from_json(line)
            except (ValueError, KeyError, TypeError) as e:
                raise TraceFormatError(lineno, f"malformed record: {e}") from None
            if last is not None and rec.ts < last:
                raise TraceFormatError(lineno, f"timestamp {rec.ts} decreases (previous {last})")
            last = rec.ts
            out.append(rec)
    return out


def trace_period(records: Sequence[TraceRecord]) -> int:
    """Length of one replay cycle in ns: span plus one mean inter-arrival gap."""
    if not records:
        raise ValueError("empty trace")
    span = records[-1].ts - records[0].ts
    gap = span // (len(records) - 1) if len(records) > 1 else 1000
    return span + max(gap, 1)


def replay(records: Sequence[TraceRecord], loop_for: int) -> Iterator[TraceRecord]:
    """Cycle through ``records`` for ``loop_for`` ns, rebasing timestamps each cycle."""
    if not records:
        raise ValueError("cannot replay an empty trace")
    period = trace_period(records)
    t0 = records[0].ts
    cycle = 0
    while True:
        base = cycle * period - t0
        for rec in records:
            ts = rec.ts + base
            if ts >= loop_for:
                return
            yield rec if base == 0 else TraceRecord(ts, rec.flow_key, rec.hops)
        cycle += 1


def trace_stats(records: Sequence[TraceRecord]) -> dict:
    occ = [r.queue_occupancy for r in records]
    return {
        "packets": len(records),
        "span_ns": records[-1].ts - records[0].ts if records else 0,
        "max_occupancy_us": max(occ, default=0),
        "mean_occupancy_us": sum(occ) / len(occ) if occ else 0.0,
    }
