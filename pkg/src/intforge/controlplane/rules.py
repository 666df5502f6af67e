from __future__ import annotations

import enum
import ipaddress
import threading
from dataclasses import dataclass, field, replace

from ..detection import AlgorithmConfig, AlgorithmKind, CnfExpression
from ..int_wire import FlowKey

FIELDS = ("src_ip", "dst_ip", "src_port", "dst_port", "proto")


class SwitchRole(enum.Enum):
    SOURCE = "source"
    TRANSIT = "transit"
    SINK = "sink"
    OFF = "off"


class RuleError(ValueError):
    pass


@dataclass(frozen=True)
class FlowMatch:
    """5-tuple match; None means wildcard for that field."""

    src_ip: int | None = None
    dst_ip: int | None = None
    src_port: int | None = None
    dst_port: int | None = None
    proto: int | None = None

    def matches(self, key: FlowKey) -> bool:
        return all(
            want is None or want == getattr(key, f)
            for f, want in ((f, getattr(self, f)) for f in FIELDS)
        )

    @property
    def specificity(self) -> int:
        return sum(getattr(self, f) is not None for f in FIELDS)

    @classmethod
    def exact(cls, key: FlowKey) -> FlowMatch:
        return cls(*(getattr(key, f) for f in FIELDS))


WILDCARD = FlowMatch()


@dataclass(frozen=True)
class FlowConfig:
    match: FlowMatch = WILDCARD
    role: SwitchRole = SwitchRole.OFF
    mask: int = 0
    algorithm: AlgorithmConfig = AlgorithmConfig(AlgorithmKind.NOOP)
    priority: int = 0
    max_hops: int = 8


def validate_flow(cfg: FlowConfig, n_expressions: int) -> None:
    if not 0 <= cfg.mask <= 0xFF:
        raise RuleError(f"mask {cfg.mask:#x} is not an 8-bit value")
    if cfg.role is SwitchRole.SOURCE and cfg.mask == 0:
        raise RuleError("source rule needs a non-empty instruction mask")
    alg = cfg.algorithm
    observes = alg.kind in (AlgorithmKind.PER_HOP, AlgorithmKind.PER_FLOW, AlgorithmKind.MOVING_AVERAGE)
    if observes and cfg.mask and not cfg.mask & (1 << alg.metadata_type):
        raise RuleError(f"algorithm observes {alg.metadata_type.attr}, which mask {cfg.mask:#04x} does not collect")
    if alg.kind is AlgorithmKind.COMPLEX and not 0 <= alg.expr_index < n_expressions:
        raise RuleError(f"expr_index {alg.expr_index} outside 0..{n_expressions - 1}")
    if not 1 <= cfg.max_hops <= 0xFF:
        raise RuleError("max_hops must be in 1..255")


class ForwardingTable:
    """IPv4 longest-prefix-match table keyed by prefix length."""

    def __init__(self, entries=(), default_port: int | None = None):
        self._by_len: dict[int, dict[int, int]] = {}
        self._lengths: list[int] = []
        self.default_port = default_port
        for prefix, port in entries:
            self.add(prefix, port)

    def add(self, prefix: str | ipaddress.IPv4Network, port: int) -> None:
        net = ipaddress.IPv4Network(prefix, strict=False)
        if net.prefixlen == 0:
            self.default_port = port
            return
        self._by_len.setdefault(net.prefixlen, {})[int(net.network_address)] = port
        self._lengths = sorted(self._by_len, reverse=True)

    def lookup(self, dst_ip: int) -> int | None:
        for plen in self._lengths:
            netmask = (0xFFFFFFFF << (32 - plen)) & 0xFFFFFFFF
            port = self._by_len[plen].get(dst_ip & netmask)
            if port is not None:
                return port
        return self.default_port

    def entries(self) -> list[tuple[str, int]]:
        out = [
            (f"{ipaddress.IPv4Address(net)}/{plen}", port)
            for plen, nets in sorted(self._by_len.items(), reverse=True)
            for net, port in sorted(nets.items())
        ]
        if self.default_port is not None:
            out.append(("0.0.0.0/0", self.default_port))
        return out


@dataclass(frozen=True)
class SwitchTables:
    """Immutable per-switch configuration snapshot.

    Pipelines grab one snapshot per packet, so a packet never sees a
    half-applied update.
    """

    switch_id: int
    rules: tuple[FlowConfig, ...] = ()
    forwarding: ForwardingTable = field(default_factory=ForwardingTable)
    expressions: tuple[tuple[int, CnfExpression], ...] = ()
    version: int = 0

    def resolve(self, key: FlowKey) -> FlowConfig | None:
        # rules are pre-sorted: priority desc, then specificity desc, then install order
        for rule in self.rules:
            if rule.match.matches(key):
                return rule
        return None


def _sorted_rules(rules) -> tuple[FlowConfig, ...]:
    # stable sort keeps install order among equal keys
    return tuple(sorted(rules, key=lambda r: (-r.priority, -r.match.specificity)))


class Controller:
    """Local stand-in for the SDN controller.

    All writes go through one lock and publish a fresh SwitchTables; readers
    never lock.
    """

    def __init__(self, n_expressions: int = 16):
        self.n_expressions = n_expressions
        self._tables: dict[int, SwitchTables] = {}
        self._lock = threading.Lock()
        self._version = 0

    @property
    def version(self) -> int:
        return self._version

    def switch_ids(self) -> list[int]:
        return sorted(self._tables)

    def add_switch(self, switch_id: int) -> None:
        with self._lock:
            if switch_id not in self._tables:
                self._tables[switch_id] = SwitchTables(switch_id, version=self._version)

    def tables(self, switch_id: int) -> SwitchTables:
        return self._tables[switch_id]

    def _publish(self, updates: dict[int, SwitchTables]) -> None:
        self._version += 1
        new = dict(self._tables)
        for sid, t in updates.items():
            new[sid] = replace(t, version=self._version)
        self._tables = new

    def install_flow(self, switch_id: int, cfg: FlowConfig) -> None:
        with self._lock:
            if switch_id not in self._tables:
                raise RuleError(f"unknown switch {switch_id}")
            validate_flow(cfg, self.n_expressions)
            t = self._tables[switch_id]
            for r in t.rules:
                if r.match == cfg.match and r.priority == cfg.priority:
                    raise RuleError(f"duplicate rule for {cfg.match} at priority {cfg.priority}")
            self._publish({switch_id: replace(t, rules=_sorted_rules(t.rules + (cfg,)))})

    def remove_flow(self, switch_id: int, match: FlowMatch, priority: int) -> None:
        with self._lock:
            t = self._tables[switch_id]
            rules = tuple(r for r in t.rules if not (r.match == match and r.priority == priority))
            if len(rules) == len(t.rules):
                raise RuleError(f"no rule for {match} at priority {priority}")
            self._publish({switch_id: replace(t, rules=rules)})

    def set_threshold(self, switch_id: int, match: FlowMatch, priority: int, threshold: int) -> None:
        """Live threshold change for one installed rule."""
        with self._lock:
            t = self._tables[switch_id]
            rules = []
            hit = False
            for r in t.rules:
                if r.match == match and r.priority == priority:
                    r = replace(r, algorithm=replace(r.algorithm, threshold=threshold))
                    hit = True
                rules.append(r)
            if not hit:
                raise RuleError(f"no rule for {match} at priority {priority}")
            self._publish({switch_id: replace(t, rules=tuple(rules))})

    def set_expression(self, switch_id: int, index: int, expr: CnfExpression) -> None:
        with self._lock:
            if not 0 <= index < self.n_expressions:
                raise RuleError(f"expression index {index} outside 0..{self.n_expressions - 1}")
            t = self._tables[switch_id]
            exprs = dict(t.expressions)
            exprs[index] = expr
            self._publish({switch_id: replace(t, expressions=tuple(sorted(exprs.items())))})

    def add_route(self, switch_id: int, prefix: str, port: int) -> None:
        with self._lock:
            t = self._tables[switch_id]
            fwd = ForwardingTable(t.forwarding.entries())
            fwd.add(prefix, port)
            self._publish({switch_id: replace(t, forwarding=fwd)})

    def replace_all(self, tables: dict[int, SwitchTables]) -> None:
        """Swap in a complete, already validated configuration for the named switches."""
        with self._lock:
            self._publish(tables)
