"""Evaluation harness: threshold sweeps, parse-capacity grid, algorithm comparison.

Potential capacity follows the linear-scaling assumption: if only a fraction
``pass_ratio`` of packets produce reports, one collector core sustains
``base_capacity / pass_ratio`` packets/s of INT traffic. Exact rational
arithmetic keeps ``potential_capacity * pass_ratio == base_capacity``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

from .collector import Collector, NullSink, bench_parse, bench_parse_interleaved
from .controlplane import Controller, SwitchRole, apply_document, parse_document
from .controlplane.config import ConfigDocument
from .dataplane import Network
from .detection import ALPHA_DEN, AlgorithmConfig, AlgorithmKind, DetectorState, evaluate
from .int_wire import Slot, encode_report
from .traffic import TraceRecord, generate_trace, get_preset, replay

log = logging.getLogger(__name__)

CSV_COLUMNS = ("preset", "algorithm", "threshold_us", "packets", "events", "pass_ratio", "potential_capacity_pps")
CAPACITY_COLUMNS = ("items", "hops", "reports_per_s")
NO_EVENTS = "no-events"
DEFAULT_THRESHOLDS = (0, 25, 50, 75, 100, 125, 150, 175, 200)


class InvariantViolation(AssertionError):
    pass


def default_config() -> dict:
    """The shipped single-switch setup: end-host source -> one INT sink."""
    return json.loads(resources.files("intforge").joinpath("data/single_switch.json").read_text())


@dataclass(frozen=True)
class SweepSpec:
    presets: tuple[str, ...] = ("web", "cache", "hadoop")
    algorithms: tuple[AlgorithmKind, ...] = (
        AlgorithmKind.NOOP,
        AlgorithmKind.PER_HOP,
        AlgorithmKind.PER_FLOW,
        AlgorithmKind.MOVING_AVERAGE,
    )
    thresholds: tuple[int, ...] = DEFAULT_THRESHOLDS
    base_capacity: float = 3.43e6
    n_packets: int = 200_000
    seed: int = 1
    loop_ns: int | None = None  # None: one pass over the trace
    alpha_num: int = 192
    metadata_type: Slot = Slot.QUEUE_OCCUPANCY
    config: dict | None = None  # raw config document; default_config() if None
    parallel: int = 1
    check_invariants: bool = True

    def __post_init__(self):
        if list(self.thresholds) != sorted(self.thresholds):
            raise ValueError("threshold list must be sorted ascending")
        if not self.base_capacity > 0:
            raise ValueError("base_capacity must be positive")


@dataclass
class SweepRow:
    preset: str
    algorithm: str
    threshold_us: int
    packets: int
    events: int
    base_capacity: Fraction
    forwarded: int = 0
    restored_ok: bool = True

    @property
    def pass_ratio(self) -> Fraction:
        return Fraction(self.events, self.packets)

    @property
    def potential_capacity(self) -> Fraction | None:
        if self.events == 0:
            return None
        return self.base_capacity / self.pass_ratio

    @property
    def amplification(self) -> Fraction | None:
        pc = self.potential_capacity
        return None if pc is None else pc / self.base_capacity

    def csv_fields(self) -> list[str]:
        pc = self.potential_capacity
        return [
            self.preset,
            self.algorithm,
            str(self.threshold_us),
            str(self.packets),
            str(self.events),
            _fmt(self.pass_ratio),
            NO_EVENTS if pc is None else _fmt(pc),
        ]


def _fmt(x: Fraction) -> str:
    return format(float(x), ".10g")


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow(r.csv_fields())
        return buf.getvalue()

    def row(self, preset: str, algorithm: str | AlgorithmKind, threshold: int) -> SweepRow:
        name = algorithm.value if isinstance(algorithm, AlgorithmKind) else algorithm
        for r in self.rows:
            if (r.preset, r.algorithm, r.threshold_us) == (preset, name, threshold):
                return r
        raise KeyError((preset, name, threshold))


@lru_cache(maxsize=8)
def _trace(preset: str, n_packets: int, seed: int, overrides: str = "") -> tuple[TraceRecord, ...]:
    ov = json.loads(overrides) if overrides else None
    return tuple(generate_trace(get_preset(preset, ov), n_packets, seed))


def _cells(spec: SweepSpec) -> list[tuple[str, AlgorithmKind, int]]:
    cells = []
    for preset in spec.presets:
        for kind in spec.algorithms:
            if kind is AlgorithmKind.NOOP:
                cells.append((preset, kind, 0))
            else:
                cells.extend((preset, kind, t) for t in spec.thresholds)
    return cells


def _sink_algorithm(doc: ConfigDocument, alg: AlgorithmConfig) -> dict:
    """Raw config with every sink rule's algorithm replaced by ``alg``."""
    raw = json.loads(json.dumps(doc.raw))
    a = {"kind": alg.kind.value, "metadata": alg.metadata_type.attr, "threshold": alg.threshold}
    if alg.kind is AlgorithmKind.MOVING_AVERAGE:
        a["alpha_num"] = alg.alpha_num
    for sw in raw["switches"]:
        for fl in sw.get("flows", []):
            if fl["role"] == SwitchRole.SINK.value:
                fl["algorithm"] = a
    return raw


def build_network(raw_config: dict) -> Network:
    doc = parse_document(raw_config)
    ctl = Controller()
    apply_document(doc, ctl)
    path = doc.path or [s.switch_id for s in doc.switches]
    kw = {s.switch_id: {"reg_n": s.reg_n, "flow_n": s.flow_n} for s in doc.switches}
    return Network(ctl, path, kw)


def run_cell(spec: SweepSpec, preset: str, kind: AlgorithmKind, threshold: int) -> SweepRow:
    """Replay one preset through source -> sink with one algorithm, reports through a collector."""
    raw = spec.config or default_config()
    doc = parse_document(raw)
    overrides = json.dumps(doc.workloads.get(preset, {}), sort_keys=True)
    records = _trace(preset, spec.n_packets, spec.seed, overrides)
    alg = AlgorithmConfig(kind, spec.metadata_type, threshold, spec.alpha_num if kind is AlgorithmKind.MOVING_AVERAGE else ALPHA_DEN)
    net = build_network(_sink_algorithm(doc, alg))

    stream = records if spec.loop_ns is None else replay(records, spec.loop_ns)
    frames = []
    packets = 0
    restored_ok = True
    for rec in stream:
        sent, out, reports = net.send_hops(rec.flow_key, rec.ts, rec.hops)
        packets += 1
        if out is None or out.int_stack is not None or out.original_bytes != sent.original_bytes:
            restored_ok = False
        for r in reports:
            frames.append(encode_report(r))

    col = Collector(NullSink())
    stats = col.collect(frames)
    row = SweepRow(preset, kind.value, threshold, packets, len(frames), Fraction(spec.base_capacity), stats.forwarded, restored_ok)
    if spec.check_invariants:
        check_row(row)
    return row


def check_row(row: SweepRow) -> None:
    if row.forwarded != row.events:
        raise InvariantViolation(f"{row}: collector forwarded {row.forwarded} of {row.events} reports")
    if not row.restored_ok:
        raise InvariantViolation(f"{row}: sink output differs from source input")
    if not 0 <= row.pass_ratio <= 1:
        raise InvariantViolation(f"{row}: pass_ratio out of range")
    pc = row.potential_capacity
    if pc is not None and pc * row.pass_ratio != row.base_capacity:
        raise InvariantViolation(f"{row}: capacity identity broken")
    if row.algorithm == AlgorithmKind.NOOP.value and row.events != row.packets:
        raise InvariantViolation(f"{row}: noop must report every packet")


def _run_cell_args(args):
    return run_cell(*args)


def check_monotone(result: SweepResult) -> list[str]:
    """Events must not increase with threshold for per-hop and per-flow."""
    problems = []
    by_key: dict[tuple[str, str], list[SweepRow]] = {}
    for r in result.rows:
        by_key.setdefault((r.preset, r.algorithm), []).append(r)
    for (preset, alg), rows in by_key.items():
        if alg not in (AlgorithmKind.PER_HOP.value, AlgorithmKind.PER_FLOW.value):
            continue
        rows.sort(key=lambda r: r.threshold_us)
        for a, b in zip(rows, rows[1:]):
            if b.events > a.events:
                problems.append(f"{preset}/{alg}: {b.events} events at {b.threshold_us} > {a.events} at {a.threshold_us}")
    return problems


def run_sweep(spec: SweepSpec) -> SweepResult:
    cells = _cells(spec)
    if spec.parallel > 1:
        with ProcessPoolExecutor(spec.parallel) as ex:
            rows = list(ex.map(_run_cell_args, [(spec, *c) for c in cells]))
    else:
        rows = [run_cell(spec, *c) for c in cells]
    result = SweepResult(rows)
    if spec.check_invariants:
        problems = check_monotone(result)
        if problems:
            raise InvariantViolation("; ".join(problems))
    return result


# -- detector-only replay ------------------------------------------------------


def count_events(records: Iterable[TraceRecord], cfg: AlgorithmConfig, state: DetectorState | None = None) -> int:
    """Events from running the detector straight over trace hops (no switch pipeline)."""
    st = state or DetectorState()
    n = 0
    for rec in records:
        if evaluate(st, rec.flow_key, rec.hops, cfg).event:
            n += 1
    return n


def event_sequence(records: Iterable[TraceRecord], cfg: AlgorithmConfig) -> list[bool]:
    st = DetectorState()
    return [evaluate(st, r.flow_key, r.hops, cfg).event for r in records]


@dataclass
class Comparison:
    preset: str
    alpha_num: int
    thresholds: list[int]
    per_flow: list[int]
    moving_average: list[int]

    @property
    def fraction_ma_le_pf(self) -> float:
        hits = sum(m <= p for m, p in zip(self.moving_average, self.per_flow))
        return hits / len(self.thresholds) if self.thresholds else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("preset", "alpha_num", "threshold_us", "per_flow_events", "moving_average_events"))
        for t, p, m in zip(self.thresholds, self.per_flow, self.moving_average):
            w.writerow((self.preset, self.alpha_num, t, p, m))
        return buf.getvalue()


def compare_algorithms(
    preset: str,
    thresholds: Sequence[int] = DEFAULT_THRESHOLDS,
    alpha_num: int = 192,
    n_packets: int = 200_000,
    seed: int = 1,
    records: Sequence[TraceRecord] | None = None,
) -> Comparison:
    recs = records if records is not None else _trace(preset, n_packets, seed)
    pf, ma = [], []
    for t in thresholds:
        pf.append(count_events(recs, AlgorithmConfig(AlgorithmKind.PER_FLOW, Slot.QUEUE_OCCUPANCY, t)))
        ma.append(count_events(recs, AlgorithmConfig(AlgorithmKind.MOVING_AVERAGE, Slot.QUEUE_OCCUPANCY, t, alpha_num)))
    return Comparison(preset, alpha_num, list(thresholds), pf, ma)


# -- parse capacity -------------------------------------------------------------


def items_mask(items: int) -> int:
    """Mask selecting the first ``items`` slots, MSB first."""
    if not 0 <= items <= 8:
        raise ValueError("items must be in 0..8")
    return (0xFF << (8 - items)) & 0xFF


def run_capacity_bench(
    items: Sequence[int] = (1, 4, 8),
    hops: Sequence[int] = (1, 2, 4),
    duration: float = 5.0,
) -> list[tuple[int, int, float]]:
    """Parse rate per (items, hops) cell; ``duration`` seconds of timing per cell.

    Cells are timed round-robin in 50 ms slices so CPU-speed drift spreads
    evenly over the grid.
    """
    cells = [(k, h) for k in items for h in hops]
    rounds = max(1, round(duration / 0.05))
    rates = bench_parse_interleaved([(items_mask(k), h) for k, h in cells], rounds, duration / rounds)
    return [(k, h, rates[(items_mask(k), h)]) for k, h in cells]


def capacity_csv(rows: Sequence[tuple[int, int, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CAPACITY_COLUMNS)
    for k, h, r in rows:
        w.writerow((k, h, f"{r:.1f}"))
    return buf.getvalue()


def measured_base_capacity(mask: int, hop_count: int, duration: float = 2.0) -> float:
    return bench_parse(mask, hop_count, duration)


def sweep_shape(raw_config: dict | None = None) -> tuple[int, int]:
    """(mask, hops per report) that the configured path produces."""
    doc = parse_document(raw_config or default_config())
    mask = 0
    for s in doc.switches:
        for r in s.tables.rules:
            if r.role is SwitchRole.SOURCE:
                mask = mask or r.mask
    return mask, 1
