import random
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import read_hex
from intforge.int_wire import (
    REPORT_FIXED_SIZE,
    FlowKey,
    HopMetadata,
    IntHeaderStack,
    ReportParseError,
    Slot,
    StackOverflowError,
    TelemetryReport,
    WireError,
    decode_report,
    decode_stack,
    encode_report,
    encode_stack,
    item_count,
    mask_slots,
    pack_ports,
    push_hop,
    report_size,
    unpack_ports,
)


def random_hop(rng: random.Random, mask: int) -> HopMetadata:
    return HopMetadata(**{s.attr: rng.getrandbits(32) for s in mask_slots(mask)})


def random_report(rng: random.Random) -> TelemetryReport:
    mask = rng.getrandbits(8)
    max_hops = rng.randint(1, 8)
    hops = tuple(random_hop(rng, mask) for _ in range(rng.randint(0, max_hops)))
    return TelemetryReport(
        seq_no=rng.getrandbits(32),
        sink_node_id=rng.getrandbits(32),
        report_ts=rng.getrandbits(32),
        flow_key=FlowKey(rng.getrandbits(32), rng.getrandbits(32), rng.getrandbits(16), rng.getrandbits(16), rng.getrandbits(8)),
        mask=mask,
        hops=hops,
        max_hops=max_hops,
        hw_id=rng.getrandbits(6),
        pad=rng.getrandbits(6),
        md_reserved=rng.getrandbits(8),
        shim_type=rng.getrandbits(8),
    )


def oracle_encode(r: TelemetryReport) -> bytes:
    """Byte layout assembled independently of the codec, one field at a time."""
    words = [h.get(s) for h in r.hops for s in sorted(mask_slots(r.mask), reverse=True)]
    head = struct.pack(">H", (r.version << 12) | (r.hw_id << 6) | r.pad)
    head += struct.pack(">III", r.seq_no, r.sink_node_id, r.report_ts)
    head += bytes([r.shim_type, len(words)])
    fk = r.flow_key
    head += struct.pack(">IIHHB", fk.src_ip, fk.dst_ip, fk.src_port, fk.dst_port, fk.proto)
    head += bytes([r.mask, len(r.hops), r.max_hops, r.md_reserved])
    return head + b"".join(struct.pack(">I", w) for w in words)


def test_switch_id_example(flow):
    r = TelemetryReport(1, 2, 3, flow, 0x80, (HopMetadata(switch_id=7),))
    raw = encode_report(r)
    assert raw[-4:] == b"\x00\x00\x00\x07"
    assert decode_report(raw) == r


def test_full_mask_four_hops_stack_width(flow):
    rng = random.Random(5)
    r = TelemetryReport(0, 0, 0, flow, 0xFF, tuple(random_hop(rng, 0xFF) for _ in range(4)))
    assert len(encode_report(r)) - REPORT_FIXED_SIZE == 128


@pytest.mark.parametrize(
    "name, report",
    [
        ("report_switch_id.hex", TelemetryReport(1, 2, 3, FlowKey(0x0A000001, 0x0A000002, 5000, 80, 17), 0x80, (HopMetadata(switch_id=7),))),
        (
            "report_two_hops.hex",
            TelemetryReport(
                0xDEADBEEF,
                9,
                1000,
                FlowKey(0xC0A8010A, 0x0A010203, 443, 51000, 6),
                0x30,
                (HopMetadata(hop_latency=1800, queue_occupancy=120), HopMetadata(hop_latency=900, queue_occupancy=3)),
                max_hops=4,
                hw_id=5,
            ),
        ),
    ],
)
def test_golden_vectors(name, report):
    raw = read_hex(name)
    assert encode_report(report) == raw
    assert decode_report(raw) == report


def test_roundtrip_1000_against_oracle():
    rng = random.Random(20240601)
    for _ in range(1000):
        r = random_report(rng)
        raw = encode_report(r)
        assert raw == oracle_encode(r)
        assert decode_report(raw) == r


def test_length_law_exhaustive(flow):
    for mask in range(256):
        hop = HopMetadata(**{s.attr: 1 for s in mask_slots(mask)})
        for n in range(9):
            r = TelemetryReport(0, 0, 0, flow, mask, (hop,) * n)
            expect = 16 + 13 + 4 + n * bin(mask).count("1") * 4
            assert len(encode_report(r)) == expect == report_size(mask, n)


def test_encode_rejects_too_many_hops(flow):
    with pytest.raises(WireError):
        encode_report(TelemetryReport(0, 0, 0, flow, 0x80, (HopMetadata(switch_id=1),) * 3, max_hops=2))


def test_encode_rejects_value_without_mask_bit(flow):
    with pytest.raises(WireError):
        encode_report(TelemetryReport(0, 0, 0, flow, 0x80, (HopMetadata(switch_id=1, hop_latency=4),)))


def test_encode_rejects_missing_value(flow):
    with pytest.raises(WireError):
        encode_report(TelemetryReport(0, 0, 0, flow, 0xC0, (HopMetadata(switch_id=1),)))


def test_decode_empty_is_truncated():
    with pytest.raises(ReportParseError) as e:
        decode_report(b"")
    assert e.value.kind == "truncated"


def test_decode_bad_version(flow):
    raw = bytearray(encode_report(TelemetryReport(0, 0, 0, flow, 0x80, (HopMetadata(switch_id=1),))))
    raw[0] = 0x20
    with pytest.raises(ReportParseError) as e:
        decode_report(bytes(raw))
    assert e.value.kind == "version"


def test_decode_hop_count_two_with_one_hop_of_bytes(flow):
    raw = bytearray(encode_report(TelemetryReport(0, 0, 0, flow, 0x80, (HopMetadata(switch_id=1),))))
    raw[30] = 2  # hop_count
    with pytest.raises(ReportParseError) as e:
        decode_report(bytes(raw))
    assert e.value.kind == "length"
    raw[15] = 2  # length_words agrees now, but the bytes are still missing
    with pytest.raises(ReportParseError) as e:
        decode_report(bytes(raw))
    assert e.value.kind == "length"


def test_decode_rejects_trailing_bytes(flow):
    raw = encode_report(TelemetryReport(0, 0, 0, flow, 0x80, (HopMetadata(switch_id=1),)))
    with pytest.raises(ReportParseError):
        decode_report(raw + b"\x00\x00\x00\x00")


def test_reserved_fields_carried(flow):
    r = TelemetryReport(0, 0, 0, flow, 0x10, (HopMetadata(queue_occupancy=1),), pad=0x2A, md_reserved=0xEE, shim_type=0x77)
    assert decode_report(encode_report(r)) == r


def test_push_onto_empty():
    s = push_hop(IntHeaderStack(0x30), HopMetadata(hop_latency=1, queue_occupancy=2))
    assert s.hop_count == 1 and s.length_words == 2


def test_push_when_full_leaves_stack_unchanged():
    hop = HopMetadata(switch_id=1)
    s = push_hop(push_hop(IntHeaderStack(0x80, max_hops=2), hop), hop)
    before = encode_stack(s)
    with pytest.raises(StackOverflowError):
        push_hop(s, hop)
    assert encode_stack(s) == before and s.hop_count == 2


def test_push_four_newest_first():
    s = IntHeaderStack(0x80)
    for i in range(1, 5):
        s = push_hop(s, HopMetadata(switch_id=i))
    decoded = decode_stack(encode_stack(s))
    assert [h.switch_id for h in decoded.hops] == [4, 3, 2, 1]


def test_stack_roundtrip_and_mismatch():
    s = push_hop(IntHeaderStack(0xFF, shim_reserved=0xBEEF), random_hop(random.Random(1), 0xFF))
    raw = encode_stack(s)
    assert decode_stack(raw) == s
    with pytest.raises(ReportParseError):
        decode_stack(raw[:-4])


def test_slot_numbering():
    assert [s.bit for s in sorted(Slot, reverse=True)] == [0x80, 0x40, 0x20, 0x10, 0x08, 0x04, 0x02, 0x01]
    assert Slot.SWITCH_ID.bit == 0x80 and Slot.QUEUE_OCCUPANCY.bit == 0x10
    assert item_count(0xFF) == 8


def test_port_pair_packing():
    assert pack_ports(1, 2) == 0x00010002
    assert unpack_ports(pack_ports(65535, 7)) == (65535, 7)


@settings(max_examples=300, deadline=None)
@given(st.randoms(use_true_random=False))
def test_roundtrip_property(rng):
    r = random_report(rng)
    assert decode_report(encode_report(r)) == r


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=80))
def test_decode_total_on_arbitrary_bytes(buf):
    # either a report or a structured error, never anything else
    try:
        r = decode_report(buf)
    except ReportParseError as e:
        assert e.kind in ("truncated", "version", "length")
    else:
        assert encode_report(r) == buf
