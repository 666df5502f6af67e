"""Software switch pipeline for the three INT roles.

A :class:`Switch` reads its tables from the :class:`Controller` once per
packet, so a reconfiguration lands between packets. User traffic is never
dropped because of telemetry: a full stack or an unexpected INT header is
counted and the packet moves on.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

from .controlplane.rules import Controller, FlowConfig, ForwardingTable, SwitchRole, SwitchTables
from .detection import DetectorState, evaluate
from .int_wire import (
    U32,
    FlowKey,
    HopMetadata,
    IntHeaderStack,
    StackOverflowError,
    TelemetryReport,
    encode_stack,
    pack_ports,
    push_hop,
    unpack_ports,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class LocalTelemetry:
    switch_id: int
    ingress_ts: int
    egress_ts: int
    queue_occupancy: int = 0
    ingress_port: int = 0
    egress_port: int = 0
    congestion: int = 0
    tx_utilization: int = 0

    def __post_init__(self):
        if self.egress_ts < self.ingress_ts:
            raise ValueError(f"egress_ts {self.egress_ts} before ingress_ts {self.ingress_ts}")

    @property
    def hop_latency(self) -> int:
        return self.egress_ts - self.ingress_ts

    def to_hop(self, mask: int) -> HopMetadata:
        return HopMetadata(
            self.switch_id if mask & 0x80 else None,
            pack_ports(self.ingress_port, self.egress_port) if mask & 0x40 else None,
            self.hop_latency & U32 if mask & 0x20 else None,
            self.queue_occupancy if mask & 0x10 else None,
            self.ingress_ts & U32 if mask & 0x08 else None,
            self.egress_ts & U32 if mask & 0x04 else None,
            self.congestion if mask & 0x02 else None,
            self.tx_utilization if mask & 0x01 else None,
        )

    @classmethod
    def from_hop(cls, hop: HopMetadata, switch_id: int | None = None, ts: int = 0) -> LocalTelemetry:
        """Rebuild local observations from a (fully populated) trace hop."""
        ingress = hop.ingress_timestamp if hop.ingress_timestamp is not None else ts
        if hop.egress_timestamp is not None and hop.egress_timestamp >= ingress:
            egress = hop.egress_timestamp
        else:
            egress = ingress + (hop.hop_latency or 0)
        in_port, out_port = unpack_ports(hop.port_ids or 0)
        return cls(
            switch_id=switch_id if switch_id is not None else (hop.switch_id or 0),
            ingress_ts=ingress,
            egress_ts=egress,
            queue_occupancy=hop.queue_occupancy or 0,
            ingress_port=in_port,
            egress_port=out_port,
            congestion=hop.queue_congestion_status or 0,
            tx_utilization=hop.egress_port_tx_utilization or 0,
        )


@dataclass(frozen=True, slots=True)
class Packet:
    flow_key: FlowKey
    payload_len: int
    arrival_ts: int
    original_bytes: bytes
    int_stack: IntHeaderStack | None = None

    def wire_bytes(self) -> bytes:
        """Carrier bytes with the INT header (if any) in front."""
        if self.int_stack is None:
            return self.original_bytes
        return encode_stack(self.int_stack) + self.original_bytes


def _with_stack(pkt: Packet, stack: IntHeaderStack | None) -> Packet:
    return Packet(pkt.flow_key, pkt.payload_len, pkt.arrival_ts, pkt.original_bytes, stack)


def make_packet(flow_key: FlowKey, payload_len: int = 64, arrival_ts: int = 0) -> Packet:
    body = flow_key.pack() + payload_len.to_bytes(2, "big") + bytes(payload_len)
    return Packet(flow_key, payload_len, arrival_ts, body)


@dataclass
class SwitchCounters:
    packets: int = 0
    anomalies: int = 0
    overflows: int = 0
    reports: int = 0
    suppressed: int = 0
    dropped: int = 0


def forward_lookup(flow_key: FlowKey, table: ForwardingTable) -> int | None:
    """Egress port by longest-prefix match on dst_ip; None means drop."""
    return table.lookup(flow_key.dst_ip)


class Switch:
    """One INT-capable switch. Owns its detector registers; single-threaded."""

    def __init__(
        self,
        switch_id: int,
        controller: Controller,
        reg_n: int | None = None,
        flow_n: int | None = None,
        hw_id: int = 0,
    ):
        self.switch_id = switch_id
        self.controller = controller
        self.hw_id = hw_id
        kw = {}
        if reg_n is not None:
            kw["reg_n"] = reg_n
        if flow_n is not None:
            kw["flow_n"] = flow_n
        self.detector = DetectorState(n_expressions=controller.n_expressions, **kw)
        self.counters = SwitchCounters()
        self._seq_no = 0
        self._tables_seen: SwitchTables | None = None
        self._rule_cache: dict[FlowKey, FlowConfig | None] = {}
        controller.add_switch(switch_id)

    def next_seq_no(self) -> int:
        seq = self._seq_no
        self._seq_no = (seq + 1) & U32
        return seq

    def _sync(self) -> SwitchTables:
        t = self.controller.tables(self.switch_id)
        if t is not self._tables_seen:
            self._rule_cache.clear()
            for idx, expr in t.expressions:
                self.detector.install_expression(idx, expr)
            self._tables_seen = t
        return t

    def resolve(self, flow_key: FlowKey, tables: SwitchTables) -> FlowConfig | None:
        try:
            return self._rule_cache[flow_key]
        except KeyError:
            cfg = self._rule_cache[flow_key] = tables.resolve(flow_key)
            return cfg

    # -- role pipelines ----------------------------------------------------

    def source_process(self, pkt: Packet, cfg: FlowConfig, local: LocalTelemetry | None) -> Packet:
        """Insert the INT header and push this hop.

        ``local=None`` inserts the header alone (an end-host source that
        contributes no metadata).
        """
        if cfg.role is not SwitchRole.SOURCE:
            return pkt
        if pkt.int_stack is not None:
            self.counters.anomalies += 1
            return pkt
        stack = IntHeaderStack(mask=cfg.mask, max_hops=cfg.max_hops)
        if local is not None:
            stack = push_hop(stack, local.to_hop(cfg.mask))
        return _with_stack(pkt, stack)

    def transit_process(self, pkt: Packet, local: LocalTelemetry | None) -> Packet:
        stack = pkt.int_stack
        if stack is None or local is None:
            return pkt
        try:
            return _with_stack(pkt, push_hop(stack, local.to_hop(stack.mask)))
        except StackOverflowError:
            self.counters.overflows += 1
            return pkt

    def sink_process(
        self, pkt: Packet, cfg: FlowConfig, local: LocalTelemetry | None, now: int
    ) -> tuple[Packet, TelemetryReport | None]:
        """Strip INT, run detection, and build a report if an event fired.

        The sink pushes its own hop (when ``local`` is given) before detection.
        ``now`` is in nanoseconds; the report carries it in microseconds.
        """
        stack = pkt.int_stack
        if stack is None:
            return pkt, None
        if local is not None:
            try:
                stack = push_hop(stack, local.to_hop(stack.mask))
            except StackOverflowError:
                self.counters.overflows += 1
        stripped = _with_stack(pkt, None)
        verdict = evaluate(self.detector, pkt.flow_key, stack.hops, cfg.algorithm)
        if not verdict.event:
            self.counters.suppressed += 1
            return stripped, None
        self.counters.reports += 1
        report = TelemetryReport(
            seq_no=self.next_seq_no(),
            sink_node_id=self.switch_id,
            report_ts=(now // 1000) & U32,
            flow_key=pkt.flow_key,
            mask=stack.mask,
            hops=stack.hops,
            max_hops=stack.max_hops,
            hw_id=self.hw_id,
            md_reserved=stack.md_reserved,
        )
        return stripped, report

    def process(
        self, pkt: Packet, local: LocalTelemetry | None = None, now: int | None = None
    ) -> tuple[Packet | None, int | None, TelemetryReport | None]:
        """Full ingress/egress pass: (packet or None if dropped, egress port, report)."""
        self.counters.packets += 1
        tables = self._sync()
        port = forward_lookup(pkt.flow_key, tables.forwarding)
        if port is None:
            self.counters.dropped += 1
            return None, None, None
        cfg = self.resolve(pkt.flow_key, tables)
        if cfg is None or cfg.role is SwitchRole.OFF:
            return pkt, port, None
        if cfg.role is SwitchRole.SOURCE:
            return self.source_process(pkt, cfg, local), port, None
        if cfg.role is SwitchRole.TRANSIT:
            return self.transit_process(pkt, local), port, None
        out, report = self.sink_process(pkt, cfg, local, pkt.arrival_ts if now is None else now)
        return out, port, report


class Network:
    """Switches chained along a fixed path, FIFO between neighbours."""

    def __init__(self, controller: Controller, path: Sequence[int], switch_kw: dict[int, dict] | None = None):
        if not path:
            raise ValueError("path needs at least one switch")
        self.controller = controller
        self.path = list(path)
        switch_kw = switch_kw or {}
        self.switches = {sid: Switch(sid, controller, **switch_kw.get(sid, {})) for sid in self.path}

    def send(
        self, pkt: Packet, locals_: Sequence[LocalTelemetry | None] = ()
    ) -> tuple[Packet | None, list[TelemetryReport]]:
        """Push one packet through the path.

        ``locals_`` is aligned to the tail of the path: with k observations,
        the last k switches get them and earlier switches contribute nothing.
        """
        offset = len(self.path) - len(locals_)
        reports = []
        for i, sid in enumerate(self.path):
            local = locals_[i - offset] if i >= offset else None
            pkt, _port, report = self.switches[sid].process(pkt, local)
            if report is not None:
                reports.append(report)
            if pkt is None:
                break
        return pkt, reports

    def send_hops(self, flow_key: FlowKey, ts: int, hops: Sequence[HopMetadata], payload_len: int = 64):
        """Convenience for trace replay: hops in path order, oldest first."""
        offset = len(self.path) - len(hops)
        if offset < 0:
            raise ValueError(f"{len(hops)} hops do not fit a {len(self.path)}-switch path")
        locals_ = [
            LocalTelemetry.from_hop(h, switch_id=self.path[offset + i], ts=ts) for i, h in enumerate(hops)
        ]
        pkt = make_packet(flow_key, payload_len, ts)
        out, reports = self.send(pkt, locals_)
        return pkt, out, reports
