"""INT monitor: parse telemetry report frames and hand them to a stream sink.

An instance is single-threaded and shared-nothing; scale out by running
one instance per input (channel or UDP port), the way one instance binds to
one NIC queue.
"""

from __future__ import annotations

import gc
import json
import logging
import queue
import random
import select
import socket
import statistics
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Protocol

from .int_wire import (
    DEFAULT_MAX_HOPS,
    FlowKey,
    HopMetadata,
    ReportParseError,
    TelemetryReport,
    decode_report,
    encode_report,
    mask_slots,
    report_size,
)

log = logging.getLogger(__name__)

DEFAULT_TOPIC = "int-events"
MAX_DATAGRAM = 65535


@dataclass(frozen=True)
class ParsedEvent:
    version: int
    hw_id: int
    pad: int
    seq_no: int
    sink_node_id: int
    report_ts: int
    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    proto: int
    shim_type: int
    mask: int
    hop_count: int
    max_hops: int
    md_reserved: int
    hops: tuple[dict, ...]
    receive_ts: int
    collector_id: int

    @classmethod
    def from_report(cls, r: TelemetryReport, receive_ts: int, collector_id: int) -> ParsedEvent:
        fk = r.flow_key
        return cls(
            version=r.version,
            hw_id=r.hw_id,
            pad=r.pad,
            seq_no=r.seq_no,
            sink_node_id=r.sink_node_id,
            report_ts=r.report_ts,
            src_ip=fk.src_ip,
            dst_ip=fk.dst_ip,
            src_port=fk.src_port,
            dst_port=fk.dst_port,
            proto=fk.proto,
            shim_type=r.shim_type,
            mask=r.mask,
            hop_count=r.hop_count,
            max_hops=r.max_hops,
            md_reserved=r.md_reserved,
            hops=tuple(h.as_dict() for h in r.hops),
            receive_ts=receive_ts,
            collector_id=collector_id,
        )

    @property
    def flow_key(self) -> FlowKey:
        return FlowKey(self.src_ip, self.dst_ip, self.src_port, self.dst_port, self.proto)

    def to_report(self) -> TelemetryReport:
        return TelemetryReport(
            seq_no=self.seq_no,
            sink_node_id=self.sink_node_id,
            report_ts=self.report_ts,
            flow_key=self.flow_key,
            mask=self.mask,
            hops=tuple(HopMetadata(**h) for h in self.hops),
            max_hops=self.max_hops,
            hw_id=self.hw_id,
            version=self.version,
            pad=self.pad,
            md_reserved=self.md_reserved,
            shim_type=self.shim_type,
        )

    def to_json(self) -> bytes:
        d = self.__dict__.copy()
        d["hops"] = list(self.hops)
        return json.dumps(d, separators=(",", ":")).encode()

    @classmethod
    def from_json(cls, raw: bytes | str) -> ParsedEvent:
        d = json.loads(raw)
        d["hops"] = tuple(d["hops"])
        return cls(**d)


@dataclass(frozen=True)
class SinkMessage:
    topic: str
    key: bytes  # packed FlowKey
    value: bytes  # ParsedEvent JSON

    def event(self) -> ParsedEvent:
        return ParsedEvent.from_json(self.value)


class SinkFull(Exception):
    pass


class StreamSink(Protocol):
    def send(self, msg: SinkMessage, block: bool = True) -> None:
        """Deliver ``msg``; with ``block=False`` raise SinkFull instead of waiting."""

    def close(self) -> None: ...


class MemorySink:
    """Bounded in-memory sink. ``maxsize=0`` means unbounded."""

    def __init__(self, maxsize: int = 0, timeout: float | None = None):
        self._q: queue.Queue[SinkMessage] = queue.Queue(maxsize)
        self.timeout = timeout

    def send(self, msg: SinkMessage, block: bool = True) -> None:
        try:
            self._q.put(msg, block=block, timeout=self.timeout if block else None)
        except queue.Full:
            raise SinkFull() from None

    def get(self, timeout: float | None = None) -> SinkMessage:
        return self._q.get(timeout=timeout)

    def drain(self) -> list[SinkMessage]:
        out = []
        while True:
            try:
                out.append(self._q.get_nowait())
            except queue.Empty:
                return out

    def __len__(self) -> int:
        return self._q.qsize()

    def close(self) -> None:
        pass


class FileSink:
    """Appends one JSON line per message: {"topic", "key" (hex), "value" (event object)}."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._f = open(self.path, "a")

    def send(self, msg: SinkMessage, block: bool = True) -> None:
        self._f.write(
            '{"topic":%s,"key":"%s","value":%s}\n' % (json.dumps(msg.topic), msg.key.hex(), msg.value.decode())
        )

    def close(self) -> None:
        self._f.close()

    @staticmethod
    def read(path: str | Path) -> list[SinkMessage]:
        out = []
        with open(path) as f:
            for line in f:
                d = json.loads(line)
                out.append(
                    SinkMessage(d["topic"], bytes.fromhex(d["key"]), json.dumps(d["value"], separators=(",", ":")).encode())
                )
        return out


class NullSink:
    """Builds nothing further and keeps nothing: the message is constructed, then dropped."""

    def __init__(self):
        self.count = 0

    def send(self, msg: SinkMessage, block: bool = True) -> None:
        self.count += 1

    def close(self) -> None:
        pass


@dataclass
class SecondStats:
    second: int
    parsed: int = 0
    errors: int = 0
    forwarded: int = 0
    dropped: int = 0


@dataclass
class CollectorStats:
    """Exact counters. ``parsed`` counts every frame taken off the input,
    so ``parsed == forwarded + errors + dropped`` always holds."""

    parsed: int = 0
    errors: int = 0
    forwarded: int = 0
    dropped: int = 0
    elapsed: float = 0.0
    per_second: list[SecondStats] = field(default_factory=list)
    error_kinds: dict[str, int] = field(default_factory=dict)

    def conserved(self) -> bool:
        return self.parsed == self.forwarded + self.errors + self.dropped


class Channel:
    """In-process FIFO frame channel; iteration ends after ``close()``."""

    _EOF = object()

    def __init__(self, maxsize: int = 0):
        self._q: queue.Queue = queue.Queue(maxsize)

    def put(self, frame: bytes) -> None:
        self._q.put(frame)

    def close(self) -> None:
        self._q.put(self._EOF)

    def __iter__(self) -> Iterator[bytes]:
        while True:
            item = self._q.get()
            if item is self._EOF:
                return
            yield item


class Collector:
    def __init__(
        self,
        sink: StreamSink,
        instance_id: int = 0,
        topic: str = DEFAULT_TOPIC,
        backpressure: str = "block",
        clock: Callable[[], float] = time.monotonic,
        on_second: Callable[[SecondStats], None] | None = None,
    ):
        if backpressure not in ("block", "drop"):
            raise ValueError("backpressure must be 'block' or 'drop'")
        self.sink = sink
        self.instance_id = instance_id
        self.topic = topic
        self.backpressure = backpressure
        self.clock = clock
        self.on_second = on_second
        self.stats = CollectorStats()

    def handle(self, frame: bytes, receive_ts: int = 0) -> ParsedEvent | None:
        """Process one frame, updating totals (not the per-second buckets)."""
        st = self.stats
        st.parsed += 1
        try:
            report = decode_report(frame)
        except ReportParseError as e:
            st.errors += 1
            st.error_kinds[e.kind] = st.error_kinds.get(e.kind, 0) + 1
            return None
        event = ParsedEvent.from_report(report, receive_ts, self.instance_id)
        msg = SinkMessage(self.topic, report.flow_key.pack(), event.to_json())
        try:
            self.sink.send(msg, block=self.backpressure == "block")
        except SinkFull:
            st.dropped += 1
            return None
        st.forwarded += 1
        return event

    def collect(self, frames: Iterable[bytes]) -> CollectorStats:
        st = self.stats
        start = self.clock()
        bucket = SecondStats(0)
        before = (st.parsed, st.errors, st.forwarded, st.dropped)

        def close_bucket():
            nonlocal before
            now_tot = (st.parsed, st.errors, st.forwarded, st.dropped)
            bucket.parsed, bucket.errors, bucket.forwarded, bucket.dropped = (a - b for a, b in zip(now_tot, before))
            before = now_tot
            st.per_second.append(bucket)
            if self.on_second:
                self.on_second(bucket)

        for frame in frames:
            now = self.clock()
            sec = int(now - start)
            if sec != bucket.second:
                close_bucket()
                bucket = SecondStats(sec)
            self.handle(frame, int(now * 1e6))
        if st.parsed != sum(b.parsed for b in st.per_second):
            close_bucket()
        st.elapsed += self.clock() - start
        return st


def collect(frames: Iterable[bytes], sink: StreamSink, **kw) -> CollectorStats:
    return Collector(sink, **kw).collect(frames)


def udp_ingest(
    port: int,
    host: str = "127.0.0.1",
    idle_timeout: float | None = 1.0,
    max_frames: int | None = None,
    stop: threading.Event | None = None,
    sock: socket.socket | None = None,
) -> Iterator[bytes]:
    """Yield one frame per datagram.

    Ends after ``max_frames`` datagrams, after ``idle_timeout`` seconds with
    no traffic, or once ``stop`` is set. Pass a pre-bound ``sock`` (see
    ``bind_udp``) to avoid racing the sender.
    """
    own = sock is None
    if own:
        sock = bind_udp(port, host)
    n = 0
    last = time.monotonic()
    try:
        while max_frames is None or n < max_frames:
            if stop is not None and stop.is_set():
                return
            r, _, _ = select.select([sock], [], [], 0.05)
            if not r:
                if idle_timeout is not None and time.monotonic() - last >= idle_timeout:
                    return
                continue
            data, _ = sock.recvfrom(MAX_DATAGRAM + 1)
            last = time.monotonic()
            n += 1
            yield data
    finally:
        if own:
            sock.close()


def bind_udp(port: int, host: str = "127.0.0.1") -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 8 << 20)
    sock.bind((host, port))
    return sock


# -- parse-capacity benchmark ----------------------------------------------


def synthetic_reports(mask: int, hop_count: int, n: int = 256, seed: int = 0) -> list[bytes]:
    rng = random.Random(seed)
    attrs = [slot.attr for slot in mask_slots(mask)]
    out = []
    for i in range(n):
        hops = tuple(HopMetadata(**{a: rng.getrandbits(32) for a in attrs}) for _ in range(hop_count))
        r = TelemetryReport(
            seq_no=i,
            sink_node_id=1,
            report_ts=i,
            flow_key=FlowKey(rng.getrandbits(32), rng.getrandbits(32), rng.getrandbits(16), rng.getrandbits(16), 17),
            mask=mask,
            hops=hops,
            max_hops=max(DEFAULT_MAX_HOPS, hop_count),
        )
        frame = encode_report(r)
        assert len(frame) == report_size(mask, hop_count)
        out.append(frame)
    return out


def bench_parse(
    mask: int, hop_count: int, duration: float = 1.0, warmup: float = 0.2, windows: int = 5
) -> float:
    """Reports/s decoded from pre-encoded frames.

    The measured period is split into ``windows`` equal slices and the median
    slice rate is returned, which keeps one preempted or turbo-boosted slice
    from moving the result. GC is paused while timing; warmup is not counted.
    """
    frames = synthetic_reports(mask, hop_count)
    decode = decode_report
    nf = len(frames)
    clock = time.perf_counter
    end = clock() + warmup
    while clock() < end:
        for f in frames:
            decode(f)
    slice_len = duration / windows
    rates = []
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(windows):
            count = 0
            start = clock()
            end = start + slice_len
            while True:
                for f in frames:
                    decode(f)
                count += nf
                now = clock()
                if now >= end:
                    break
            rates.append(count / (now - start))
    finally:
        if gc_was_enabled:
            gc.enable()
    return statistics.median(rates)


def bench_parse_rounds(
    cells: Iterable[tuple[int, int]], rounds: int = 10, window: float = 0.05, warmup: float = 0.2
) -> dict[tuple[int, int], list[float]]:
    """Per-round reports/s for each (mask, hop_count), measured round-robin.

    Each round times every cell for ``window`` seconds in turn, so slow drift
    in CPU speed hits all cells alike instead of whichever ran last.
    """
    cells = list(dict.fromkeys(cells))
    frames = {c: synthetic_reports(*c) for c in cells}
    decode = decode_report
    clock = time.perf_counter
    end = clock() + warmup
    while clock() < end:
        for c in cells:
            for f in frames[c]:
                decode(f)
    rates: dict[tuple[int, int], list[float]] = {c: [] for c in cells}
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(rounds):
            for c in cells:
                fs = frames[c]
                count = 0
                start = clock()
                stop = start + window
                while True:
                    for f in fs:
                        decode(f)
                    count += len(fs)
                    now = clock()
                    if now >= stop:
                        break
                rates[c].append(count / (now - start))
    finally:
        if gc_was_enabled:
            gc.enable()
    return rates


def bench_parse_interleaved(
    cells: Iterable[tuple[int, int]], rounds: int = 10, window: float = 0.05, warmup: float = 0.2
) -> dict[tuple[int, int], float]:
    """Median of :func:`bench_parse_rounds` per cell."""
    return {c: statistics.median(r) for c, r in bench_parse_rounds(cells, rounds, window, warmup).items()}
