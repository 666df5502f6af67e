"""Sink-side event pre-filter.

Everything here sticks to unsigned 32-bit integer arithmetic and fixed-size
register arrays so that each algorithm maps onto a match-action pipeline:
no floats, no unbounded loops, hash collisions silently share a register.
"""

from __future__ import annotations

import enum
import operator
import struct
import zlib
from dataclasses import dataclass
from typing import Sequence

from .int_wire import U32, FlowKey, HopMetadata, Slot

REG_N = 256
FLOW_N = 65536
MAX_CLAUSES = 4
MAX_LITERALS = 4
ALPHA_DEN = 256


class AlgorithmKind(enum.Enum):
    PER_HOP = "per_hop"
    PER_FLOW = "per_flow"
    MOVING_AVERAGE = "moving_average"
    NOOP = "noop"
    COMPLEX = "complex"


@dataclass(frozen=True)
class AlgorithmConfig:
    kind: AlgorithmKind
    metadata_type: Slot = Slot.QUEUE_OCCUPANCY
    threshold: int = 0
    alpha_num: int = ALPHA_DEN
    expr_index: int = 0
    # store the average on every packet, not only on events
    ewma_always_update: bool = False

    def __post_init__(self):
        if not 0 <= self.alpha_num <= ALPHA_DEN:
            raise ValueError(f"alpha_num must be in 0..{ALPHA_DEN}, got {self.alpha_num}")
        if not 0 <= self.threshold <= U32:
            raise ValueError(f"threshold {self.threshold} does not fit in 32 bits")
        object.__setattr__(self, "metadata_type", Slot(self.metadata_type))


@dataclass(frozen=True, slots=True)
class Verdict:
    event: bool
    observed_value: int = 0


def absdiff(a: int, b: int) -> int:
    return a - b if a >= b else b - a


def flow_hash(flow_key: FlowKey) -> int:
    return zlib.crc32(flow_key.pack())


class DetectorState:
    """Register tables for one sink pipeline.

    Registers are indexed [slot][index]; the slot dimension is allocated on
    first use. Per-hop registers are keyed by ``switch_id % reg_n``, per-flow
    and average registers by ``crc32(flow_key) % flow_n``.
    """

    def __init__(self, reg_n: int = REG_N, flow_n: int = FLOW_N, n_expressions: int = 16):
        self.reg_n = reg_n
        self.flow_n = flow_n
        self.per_hop_regs: dict[int, list[int]] = {}
        self.per_flow_regs: dict[int, list[int]] = {}
        self.avg_regs: dict[int, list[int]] = {}
        # encoded CNF expressions, one per register index
        self.expressions: list[bytes] = [b""] * n_expressions
        self.anomalies = 0
        self._decoded: dict[bytes, CnfExpression] = {}
        self._flow_idx: dict[FlowKey, int] = {}

    def _regs(self, table: dict[int, list[int]], slot: int, size: int) -> list[int]:
        regs = table.get(slot)
        if regs is None:
            regs = table[slot] = [0] * size
        return regs

    def hop_regs(self, slot: int) -> list[int]:
        return self._regs(self.per_hop_regs, slot, self.reg_n)

    def flow_regs(self, slot: int) -> list[int]:
        return self._regs(self.per_flow_regs, slot, self.flow_n)

    def average_regs(self, slot: int) -> list[int]:
        return self._regs(self.avg_regs, slot, self.flow_n)

    def flow_index(self, flow_key: FlowKey) -> int:
        idx = self._flow_idx.get(flow_key)
        if idx is None:
            idx = self._flow_idx[flow_key] = flow_hash(flow_key) % self.flow_n
        return idx

    def install_expression(self, index: int, expr: CnfExpression) -> None:
        self.expressions[index] = encode_cnf(expr)

    def expression(self, index: int) -> CnfExpression:
        raw = self.expressions[index]
        expr = self._decoded.get(raw)
        if expr is None:
            expr = self._decoded[raw] = decode_cnf(raw)
        return expr

    def snapshot(self) -> dict:
        """Read-only copy of all non-zero registers."""

        def nz(table):
            out = {}
            for slot, regs in table.items():
                vals = {i: v for i, v in enumerate(regs) if v}
                if vals:
                    out[slot] = vals
            return out

        return {
            "per_hop": nz(self.per_hop_regs),
            "per_flow": nz(self.per_flow_regs),
            "avg": nz(self.avg_regs),
            "expressions": list(self.expressions),
        }


def detect_per_hop(state: DetectorState, hops: Sequence[HopMetadata], cfg: AlgorithmConfig) -> Verdict:
    attr = cfg.metadata_type.attr
    regs = state.hop_regs(cfg.metadata_type)
    event = False
    observed = None
    for pos, hop in enumerate(hops):
        new = getattr(hop, attr)
        if new is None:
            continue
        key = hop.switch_id if hop.switch_id is not None else pos
        idx = key % state.reg_n
        if absdiff(new, regs[idx]) > cfg.threshold:
            regs[idx] = new
            if not event:
                observed = new
            event = True
        elif observed is None:
            observed = new
    return Verdict(event, observed or 0)


def _sum(hops: Sequence[HopMetadata], attr: str) -> int:
    s = 0
    for hop in hops:
        v = getattr(hop, attr)
        if v is not None:
            s = (s + v) & U32
    return s


def detect_per_flow(
    state: DetectorState, flow_key: FlowKey, hops: Sequence[HopMetadata], cfg: AlgorithmConfig
) -> Verdict:
    s = _sum(hops, cfg.metadata_type.attr)
    regs = state.flow_regs(cfg.metadata_type)
    idx = state.flow_index(flow_key)
    if absdiff(s, regs[idx]) > cfg.threshold:
        regs[idx] = s
        return Verdict(True, s)
    return Verdict(False, s)


def detect_moving_average(
    state: DetectorState, flow_key: FlowKey, hops: Sequence[HopMetadata], cfg: AlgorithmConfig
) -> Verdict:
    s = _sum(hops, cfg.metadata_type.attr)
    regs = state.average_regs(cfg.metadata_type)
    idx = state.flow_index(flow_key)
    avg = regs[idx]
    a = cfg.alpha_num
    new_avg = (a * s + (ALPHA_DEN - a) * avg) // ALPHA_DEN
    if absdiff(new_avg, avg) > cfg.threshold:
        regs[idx] = new_avg
        return Verdict(True, new_avg)
    if cfg.ewma_always_update:
        regs[idx] = new_avg
    return Verdict(False, new_avg)


def detect_noop() -> Verdict:
    return Verdict(True, 0)


# -- CNF expressions ---------------------------------------------------------


class Comparator(enum.IntEnum):
    LT = 0
    GT = 1
    LE = 2
    GE = 3
    EQ = 4
    NE = 5

    @property
    def symbol(self) -> str:
        return _CMP_SYMBOL[self]

    @classmethod
    def from_symbol(cls, sym: str) -> Comparator:
        return _SYMBOL_CMP[sym]


_CMP_SYMBOL = {
    Comparator.LT: "<",
    Comparator.GT: ">",
    Comparator.LE: "<=",
    Comparator.GE: ">=",
    Comparator.EQ: "==",
    Comparator.NE: "!=",
}
_SYMBOL_CMP = {v: k for k, v in _CMP_SYMBOL.items()}
_CMP_FN = {
    Comparator.LT: operator.lt,
    Comparator.GT: operator.gt,
    Comparator.LE: operator.le,
    Comparator.GE: operator.ge,
    Comparator.EQ: operator.eq,
    Comparator.NE: operator.ne,
}


class Aggregate(enum.IntEnum):
    SUM = 0
    MAX = 1


@dataclass(frozen=True, order=True)
class Literal:
    metadata_type: Slot
    comparator: Comparator
    constant: int
    aggregate: Aggregate = Aggregate.SUM

    def __str__(self) -> str:
        name = Slot(self.metadata_type).attr
        if self.aggregate is Aggregate.MAX:
            name = f"max({name})"
        return f"{name} {Comparator(self.comparator).symbol} {self.constant}"


@dataclass(frozen=True)
class CnfExpression:
    clauses: tuple[tuple[Literal, ...], ...] = ()

    def __post_init__(self):
        if len(self.clauses) > MAX_CLAUSES:
            raise ValueError(f"{len(self.clauses)} clauses exceeds MAX_CLAUSES={MAX_CLAUSES}")
        for c in self.clauses:
            if not c:
                raise ValueError("empty clause")
            if len(c) > MAX_LITERALS:
                raise ValueError(f"clause with {len(c)} literals exceeds MAX_LITERALS={MAX_LITERALS}")

    def __str__(self) -> str:
        if not self.clauses:
            return "true"
        return " and ".join("(" + " or ".join(map(str, c)) + ")" for c in self.clauses)


def aggregate_value(hops: Sequence[HopMetadata], slot: Slot, agg: Aggregate) -> int | None:
    """Sum (wrapping) or max of a slot over all hops; None if no hop carries it."""
    attr = Slot(slot).attr
    acc = None
    for hop in hops:
        v = getattr(hop, attr)
        if v is None:
            continue
        if acc is None:
            acc = v
        elif agg is Aggregate.SUM:
            acc = (acc + v) & U32
        elif v > acc:
            acc = v
    return acc


def eval_cnf(expr: CnfExpression, hops: Sequence[HopMetadata]) -> Verdict:
    cache: dict[tuple[int, int], int | None] = {}
    observed = 0
    for ci, clause in enumerate(expr.clauses):
        clause_true = False
        for li, lit in enumerate(clause):
            key = (lit.metadata_type, lit.aggregate)
            if key not in cache:
                cache[key] = aggregate_value(hops, lit.metadata_type, lit.aggregate)
            value = cache[key]
            if ci == 0 and li == 0 and value is not None:
                observed = value
            if value is not None and _CMP_FN[lit.comparator](value, lit.constant):
                clause_true = True
                break
        if not clause_true:
            return Verdict(False, observed)
    return Verdict(True, observed)


# per literal: metadata_type u8, comparator u8, aggregate u8, pad u8, constant u32, clause_index u32
_LITERAL = struct.Struct("!BBBBII")
LITERAL_SIZE = _LITERAL.size


def encode_cnf(expr: CnfExpression) -> bytes:
    out = bytearray()
    for ci, clause in enumerate(expr.clauses):
        for lit in clause:
            out += _LITERAL.pack(int(lit.metadata_type), int(lit.comparator), int(lit.aggregate), 0, lit.constant, ci)
    return bytes(out)


def decode_cnf(raw: bytes) -> CnfExpression:
    if len(raw) % LITERAL_SIZE:
        raise ValueError(f"CNF register length {len(raw)} is not a multiple of {LITERAL_SIZE}")
    clauses: list[list[Literal]] = []
    for off in range(0, len(raw), LITERAL_SIZE):
        slot, cmp_, agg, _pad, const, ci = _LITERAL.unpack_from(raw, off)
        if ci == len(clauses):
            clauses.append([])
        elif ci != len(clauses) - 1:
            raise ValueError(f"clause index {ci} out of order")
        clauses[ci].append(Literal(Slot(slot), Comparator(cmp_), const, Aggregate(agg)))
    return CnfExpression(tuple(tuple(c) for c in clauses))


def evaluate(
    state: DetectorState, flow_key: FlowKey, hops: Sequence[HopMetadata], cfg: AlgorithmConfig
) -> Verdict:
    """Run the algorithm selected by ``cfg`` on one packet's hop stack."""
    kind = cfg.kind
    if kind is AlgorithmKind.PER_FLOW:
        return detect_per_flow(state, flow_key, hops, cfg)
    if kind is AlgorithmKind.PER_HOP:
        return detect_per_hop(state, hops, cfg)
    if kind is AlgorithmKind.MOVING_AVERAGE:
        return detect_moving_average(state, flow_key, hops, cfg)
    if kind is AlgorithmKind.NOOP:
        return detect_noop()
    if kind is AlgorithmKind.COMPLEX:
        return eval_cnf(state.expression(cfg.expr_index), hops)
    state.anomalies += 1
    return Verdict(False, 0)
