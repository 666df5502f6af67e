"""INT header stack and telemetry report codec.

All multi-byte fields are big-endian. Every metadata item is one 32-bit word;
the port pair is packed as ingress (high 16 bits) || egress (low 16 bits).

Report layout (33 fixed bytes, then the hop stack)::

    0   u16  version:4 | hw_id:6 | pad:6
    2   u32  seq_no
    6   u32  sink_node_id
    10  u32  report_ts (us)
    14  u8   shim type (0x01)
    15  u8   length_words (stack words)
    16  13B  flow key: src_ip, dst_ip, src_port, dst_port, proto
    29  u8   instruction mask
    30  u8   hop_count
    31  u8   max_hops
    32  u8   md reserved
    33  ...  hop_count x popcount(mask) words, most recent hop first

In-band layout: 4-byte shim (type, length_words, reserved:16), 4-byte
md header (mask, hop_count, max_hops, reserved), then the stack.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, fields

U32 = 0xFFFFFFFF
SHIM_TYPE = 0x01
REPORT_VERSION = 1
REPORT_FIXED_SIZE = 33
STACK_HEADER_SIZE = 8
DEFAULT_MAX_HOPS = 8

_REPORT_HEAD = struct.Struct("!HIIIBB")
_FLOW_KEY = struct.Struct("!IIHHB")
_MD_HEADER = struct.Struct("!BBBB")
_SHIM = struct.Struct("!BBH")
_WORD = struct.Struct("!I")


class Slot(enum.IntEnum):
    """Instruction slot ids; the value is the bit position in the mask."""

    SWITCH_ID = 7
    PORT_IDS = 6
    HOP_LATENCY = 5
    QUEUE_OCCUPANCY = 4
    INGRESS_TIMESTAMP = 3
    EGRESS_TIMESTAMP = 2
    QUEUE_CONGESTION_STATUS = 1
    EGRESS_PORT_TX_UTILIZATION = 0

    @property
    def bit(self) -> int:
        return 1 << self.value

    @property
    def attr(self) -> str:
        return self.name.lower()


class Instruction(enum.IntFlag):
    SWITCH_ID = 0x80
    PORT_IDS = 0x40
    HOP_LATENCY = 0x20
    QUEUE_OCCUPANCY = 0x10
    INGRESS_TIMESTAMP = 0x08
    EGRESS_TIMESTAMP = 0x04
    QUEUE_CONGESTION_STATUS = 0x02
    EGRESS_PORT_TX_UTILIZATION = 0x01


# encoding order: MSB first
SLOTS_MSB_FIRST: tuple[Slot, ...] = tuple(sorted(Slot, reverse=True))
SLOT_ATTRS: tuple[str, ...] = tuple(s.attr for s in SLOTS_MSB_FIRST)


def item_count(mask: int) -> int:
    return bin(mask & 0xFF).count("1")


def mask_for(*slots: Slot) -> int:
    m = 0
    for s in slots:
        m |= 1 << int(s)
    return m


def mask_slots(mask: int) -> list[Slot]:
    return [s for s in SLOTS_MSB_FIRST if mask & (1 << s)]


def pack_ports(ingress: int, egress: int) -> int:
    return ((ingress & 0xFFFF) << 16) | (egress & 0xFFFF)


def unpack_ports(port_ids: int) -> tuple[int, int]:
    return port_ids >> 16, port_ids & 0xFFFF


class WireError(ValueError):
    """Invalid value or layout on the encode side."""


class StackOverflowError(WireError):
    """Raised when pushing onto a stack that already holds max_hops entries."""


class ReportParseError(ValueError):
    """Structured decode failure. ``kind`` is one of
    ``truncated``, ``version``, ``length``."""

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


@dataclass(frozen=True, slots=True)
class HopMetadata:
    switch_id: int | None = None
    port_ids: int | None = None
    hop_latency: int | None = None
    queue_occupancy: int | None = None
    ingress_timestamp: int | None = None
    egress_timestamp: int | None = None
    queue_congestion_status: int | None = None
    egress_port_tx_utilization: int | None = None

    def get(self, slot: int) -> int | None:
        return getattr(self, Slot(slot).attr)

    def values(self) -> tuple[int | None, ...]:
        """All eight slots, MSB first."""
        return (
            self.switch_id,
            self.port_ids,
            self.hop_latency,
            self.queue_occupancy,
            self.ingress_timestamp,
            self.egress_timestamp,
            self.queue_congestion_status,
            self.egress_port_tx_utilization,
        )

    @property
    def present_mask(self) -> int:
        m = 0
        bit = 0x80
        for v in self.values():
            if v is not None:
                m |= bit
            bit >>= 1
        return m

    def project(self, mask: int) -> HopMetadata:
        """Keep only the items selected by ``mask``."""
        return HopMetadata(
            *(getattr(self, a) if mask & (1 << s) else None for s, a in zip(SLOTS_MSB_FIRST, SLOT_ATTRS))
        )

    def as_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}


def _check_hop(hop: HopMetadata, mask: int) -> None:
    present = 0
    bit = 0x80
    for v in hop.values():
        if v is not None:
            if not 0 <= v <= U32:
                raise WireError(f"value {v} does not fit in 32 bits")
            present |= bit
        bit >>= 1
    if present != mask:
        raise WireError(f"hop items {present:#04x} do not match mask {mask:#04x}")


@dataclass(frozen=True, slots=True)
class FlowKey:
    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    proto: int

    def pack(self) -> bytes:
        return _FLOW_KEY.pack(self.src_ip, self.dst_ip, self.src_port, self.dst_port, self.proto)

    @classmethod
    def unpack(cls, buf: bytes, offset: int = 0) -> FlowKey:
        return cls(*_FLOW_KEY.unpack_from(buf, offset))


@dataclass(frozen=True, slots=True)
class IntHeaderStack:
    """In-band INT header: shim, md header and hops (most recent first)."""

    mask: int
    max_hops: int = DEFAULT_MAX_HOPS
    hops: tuple[HopMetadata, ...] = ()
    shim_type: int = SHIM_TYPE
    shim_reserved: int = 0
    md_reserved: int = 0

    @property
    def hop_count(self) -> int:
        return len(self.hops)

    @property
    def length_words(self) -> int:
        return len(self.hops) * item_count(self.mask)


def push_hop(stack: IntHeaderStack, hop: HopMetadata) -> IntHeaderStack:
    """Return a new stack with ``hop`` prepended.

    Raises StackOverflowError when the stack is full; the caller keeps the
    old stack and forwards the packet without the new hop.
    """
    if stack.hop_count >= stack.max_hops:
        raise StackOverflowError(f"stack full at {stack.max_hops} hops")
    _check_hop(hop, stack.mask)
    if (stack.hop_count + 1) * item_count(stack.mask) > 0xFF:
        raise StackOverflowError("length_words would exceed 8 bits")
    return IntHeaderStack(
        stack.mask, stack.max_hops, (hop,) + stack.hops, stack.shim_type, stack.shim_reserved, stack.md_reserved
    )


@dataclass(frozen=True, slots=True)
class TelemetryReport:
    seq_no: int
    sink_node_id: int
    report_ts: int
    flow_key: FlowKey
    mask: int
    hops: tuple[HopMetadata, ...] = ()
    max_hops: int = DEFAULT_MAX_HOPS
    hw_id: int = 0
    version: int = REPORT_VERSION
    pad: int = 0
    md_reserved: int = 0
    shim_type: int = SHIM_TYPE

    @property
    def hop_count(self) -> int:
        return len(self.hops)

    @property
    def length_words(self) -> int:
        return len(self.hops) * item_count(self.mask)


def report_size(mask: int, hop_count: int) -> int:
    return REPORT_FIXED_SIZE + hop_count * item_count(mask) * 4


def _encode_hops(out: bytearray, hops: tuple[HopMetadata, ...], mask: int) -> None:
    pack = _WORD.pack
    for hop in hops:
        _check_hop(hop, mask)
        for v in hop.values():
            if v is not None:
                out += pack(v)


def _decode_hops(buf: bytes, offset: int, mask: int, hop_count: int) -> tuple[HopMetadata, ...]:
    # walks the full instruction mask for every hop, like the hardware parser
    unpack = _WORD.unpack_from
    hops = []
    for _ in range(hop_count):
        vals = []
        for s in SLOTS_MSB_FIRST:
            if mask & (1 << s):
                vals.append(unpack(buf, offset)[0])
                offset += 4
            else:
                vals.append(None)
        hops.append(HopMetadata(*vals))
    return tuple(hops)


def encode_report(report: TelemetryReport) -> bytes:
    r = report
    if r.hop_count > r.max_hops:
        raise WireError(f"hop_count {r.hop_count} exceeds max_hops {r.max_hops}")
    if r.length_words > 0xFF or r.max_hops > 0xFF:
        raise WireError("stack too large for 8-bit length fields")
    if not (0 <= r.version < 16 and 0 <= r.hw_id < 64 and 0 <= r.pad < 64):
        raise WireError("version/hw_id/pad out of range")
    out = bytearray(
        _REPORT_HEAD.pack(
            (r.version << 12) | (r.hw_id << 6) | r.pad,
            r.seq_no,
            r.sink_node_id,
            r.report_ts & U32,
            r.shim_type,
            r.length_words,
        )
    )
    out += r.flow_key.pack()
    out += _MD_HEADER.pack(r.mask, r.hop_count, r.max_hops, r.md_reserved)
    _encode_hops(out, r.hops, r.mask)
    return bytes(out)


def decode_report(buf: bytes) -> TelemetryReport:
    if len(buf) < REPORT_FIXED_SIZE:
        raise ReportParseError("truncated", f"{len(buf)} bytes < {REPORT_FIXED_SIZE}")
    word0, seq_no, sink_id, ts, shim_type, length_words = _REPORT_HEAD.unpack_from(buf, 0)
    version = word0 >> 12
    if version != REPORT_VERSION:
        raise ReportParseError("version", f"unsupported report version {version}")
    mask, hop_count, max_hops, md_reserved = _MD_HEADER.unpack_from(buf, 29)
    if length_words != hop_count * item_count(mask):
        raise ReportParseError(
            "length", f"length_words {length_words} != {hop_count} hops x {item_count(mask)} items"
        )
    if len(buf) != REPORT_FIXED_SIZE + length_words * 4:
        raise ReportParseError(
            "length", f"buffer holds {len(buf) - REPORT_FIXED_SIZE} stack bytes, header declares {length_words * 4}"
        )
    return TelemetryReport(
        seq_no=seq_no,
        sink_node_id=sink_id,
        report_ts=ts,
        flow_key=FlowKey.unpack(buf, 16),
        mask=mask,
        hops=_decode_hops(buf, REPORT_FIXED_SIZE, mask, hop_count),
        max_hops=max_hops,
        hw_id=(word0 >> 6) & 0x3F,
        version=version,
        pad=word0 & 0x3F,
        md_reserved=md_reserved,
        shim_type=shim_type,
    )


def encode_stack(stack: IntHeaderStack) -> bytes:
    if stack.hop_count > stack.max_hops:
        raise WireError(f"hop_count {stack.hop_count} exceeds max_hops {stack.max_hops}")
    if stack.length_words > 0xFF:
        raise WireError("stack too large for 8-bit length field")
    out = bytearray(_SHIM.pack(stack.shim_type, stack.length_words, stack.shim_reserved))
    out += _MD_HEADER.pack(stack.mask, stack.hop_count, stack.max_hops, stack.md_reserved)
    _encode_hops(out, stack.hops, stack.mask)
    return bytes(out)


def decode_stack(buf: bytes) -> IntHeaderStack:
    if len(buf) < STACK_HEADER_SIZE:
        raise ReportParseError("truncated", f"{len(buf)} bytes < {STACK_HEADER_SIZE}")
    shim_type, length_words, shim_reserved = _SHIM.unpack_from(buf, 0)
    mask, hop_count, max_hops, md_reserved = _MD_HEADER.unpack_from(buf, 4)
    if length_words != hop_count * item_count(mask) or len(buf) != STACK_HEADER_SIZE + length_words * 4:
        raise ReportParseError("length", "declared and actual stack widths differ")
    return IntHeaderStack(
        mask=mask,
        max_hops=max_hops,
        hops=_decode_hops(buf, STACK_HEADER_SIZE, mask, hop_count),
        shim_type=shim_type,
        shim_reserved=shim_reserved,
        md_reserved=md_reserved,
    )
