"""``int-forge`` command line.

Subcommands: gen, run, sweep, bench-collector, compare, collect, calibrate.
Exit status is 1 on any invariant violation and 2 on bad input.
"""

from __future__ import annotations

import argparse
import json
import logging
import struct
import sys
from pathlib import Path

from . import bench, traffic
from .collector import Collector, FileSink, MemorySink, SecondStats, bind_udp, udp_ingest
from .controlplane import ConfigError, parse_document
from .detection import AlgorithmKind
from .int_wire import encode_report

log = logging.getLogger("intforge")


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _load_raw_config(path: str | None) -> dict | None:
    if path is None:
        return None
    raw = json.loads(Path(path).read_text())
    parse_document(raw)  # fail early with diagnostics
    return raw


def _workload_overrides(raw: dict | None, preset: str) -> dict | None:
    if raw is None:
        return None
    return raw.get("workloads", {}).get(preset)


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def cmd_gen(args) -> int:
    raw = _load_raw_config(args.config)
    preset = traffic.get_preset(args.preset, _workload_overrides(raw, args.preset))
    records = traffic.generate_trace(preset, args.packets, args.seed)
    n = traffic.write_trace(records, args.out)
    stats = traffic.trace_stats(records)
    print(json.dumps({"written": n, **stats}))
    return 0


def cmd_run(args) -> int:
    raw = _load_raw_config(args.config) or bench.default_config()
    if args.trace:
        records = traffic.read_trace(args.trace)
    else:
        preset = traffic.get_preset(args.preset, _workload_overrides(raw, args.preset))
        records = traffic.generate_trace(preset, args.packets, args.seed)
    net = bench.build_network(raw)
    stream = records if args.duration is None else traffic.replay(records, int(args.duration * 1e9))

    sink = FileSink(args.sink[5:]) if args.sink.startswith("file:") else MemorySink()
    frames = []
    packets = 0
    restored = True
    for rec in stream:
        sent, out, reports = net.send_hops(rec.flow_key, rec.ts, rec.hops)
        packets += 1
        restored &= out is not None and out.original_bytes == sent.original_bytes and out.int_stack is None
        frames.extend(encode_report(r) for r in reports)
    stats = Collector(sink).collect(frames)
    sink.close()
    summary = {
        "packets": packets,
        "reports": len(frames),
        "forwarded": stats.forwarded,
        "parse_errors": stats.errors,
        "pass_ratio": len(frames) / packets if packets else 0.0,
        "switches": {sid: vars(sw.counters) for sid, sw in net.switches.items()},
    }
    print(json.dumps(summary, indent=2))
    ok = restored and stats.forwarded == len(frames)
    if not ok:
        print("invariant violation: conservation or carrier restoration failed", file=sys.stderr)
    return 0 if ok else 1


def cmd_sweep(args) -> int:
    raw = _load_raw_config(args.config)
    base = args.base_capacity
    if base is None:
        mask, hops = bench.sweep_shape(raw)
        base = bench.measured_base_capacity(mask, hops)
        print(f"measured base capacity {base:.1f} reports/s (mask {mask:#04x}, {hops} hop)", file=sys.stderr)
    spec = bench.SweepSpec(
        presets=tuple(args.presets.split(",")),
        algorithms=tuple(AlgorithmKind(a) for a in args.algorithms.split(",")),
        thresholds=tuple(_ints(args.thresholds)),
        base_capacity=base,
        n_packets=args.packets,
        seed=args.seed,
        loop_ns=None if args.duration is None else int(args.duration * 1e9),
        alpha_num=args.alpha,
        config=raw,
        parallel=args.parallel,
    )
    try:
        result = bench.run_sweep(spec)
    except bench.InvariantViolation as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return 1
    _write(result.to_csv(), args.out)
    return 0


def cmd_bench_collector(args) -> int:
    rows = bench.run_capacity_bench(_ints(args.items), _ints(args.hops), args.duration)
    _write(bench.capacity_csv(rows), args.out)
    return 0


def cmd_compare(args) -> int:
    cmp = bench.compare_algorithms(args.preset, _ints(args.thresholds), args.alpha, args.packets, args.seed)
    _write(cmp.to_csv(), args.out)
    print(f"moving_average <= per_flow at {cmp.fraction_ma_le_pf:.0%} of thresholds", file=sys.stderr)
    return 0


def _stdin_frames():
    """Frames on stdin, each prefixed with a big-endian u16 length."""
    src = sys.stdin.buffer
    while True:
        head = src.read(2)
        if len(head) < 2:
            return
        (n,) = struct.unpack("!H", head)
        yield src.read(n)


def cmd_collect(args) -> int:
    if args.sink == "mem":
        sink = MemorySink()
    elif args.sink.startswith("file:"):
        sink = FileSink(args.sink[5:])
    else:
        print(f"unknown sink {args.sink!r}", file=sys.stderr)
        return 2
    if args.input == "channel":
        frames = _stdin_frames()
    elif args.input.startswith("udp:"):
        port = int(args.input[4:])
        frames = udp_ingest(port, args.host, idle_timeout=args.idle_timeout, sock=bind_udp(port, args.host))
    else:
        print(f"unknown input {args.input!r}", file=sys.stderr)
        return 2

    def report(b: SecondStats):
        print(f"{b.second}, {b.parsed / args.stats_interval:.0f}, {b.errors}, {b.forwarded}", flush=True)

    print("ts, pps, errors, forwarded")
    col = Collector(sink, instance_id=args.instance, backpressure=args.backpressure, on_second=report)
    stats = col.collect(frames)
    sink.close()
    print(
        f"# total parsed={stats.parsed} errors={stats.errors} forwarded={stats.forwarded} dropped={stats.dropped}",
        file=sys.stderr,
    )
    return 0 if stats.conserved() else 1


def cmd_calibrate(args) -> int:
    """Print the quantities the shipped presets are tuned against."""
    from .detection import AlgorithmConfig
    from .int_wire import Slot

    raw = _load_raw_config(args.config)
    out = []
    for name in args.presets.split(","):
        preset = traffic.get_preset(name, _workload_overrides(raw, name))
        maxima = []
        for s in range(args.seed, args.seed + args.seeds):
            recs = traffic.generate_trace(preset, args.packets, s)
            maxima.append(traffic.trace_stats(recs)["max_occupancy_us"])
        recs = traffic.generate_trace(preset, args.packets, args.seed)
        row = {"preset": name, "max_occupancy_us": max(maxima), "mean_burst_us": preset.params.burst_duration.mean}
        for t in _ints(args.thresholds):
            ev = bench.count_events(recs, AlgorithmConfig(AlgorithmKind.PER_FLOW, Slot.QUEUE_OCCUPANCY, t))
            row[f"amp@{t}"] = round(len(recs) / ev, 3) if ev else None
        out.append(row)
        print(json.dumps(row))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="int-forge", description="INT event pre-filtering toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, packets=True):
        sp.add_argument("--config", help="JSON config document")
        sp.add_argument("--seed", type=int, default=1)
        if packets:
            sp.add_argument("--packets", type=int, default=200_000)

    sp = sub.add_parser("gen", help="generate a synthetic trace (JSON lines)")
    common(sp)
    sp.add_argument("--preset", choices=sorted(traffic.PRESETS), default="web")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("run", help="replay a trace through the configured path")
    common(sp)
    sp.add_argument("--preset", choices=sorted(traffic.PRESETS), default="web")
    sp.add_argument("--trace", help="trace file instead of a generated preset")
    sp.add_argument("--duration", type=float, help="loop the trace for this many seconds of trace time")
    sp.add_argument("--sink", default="mem", help="mem | file:<path>")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="threshold sweep -> CSV")
    common(sp)
    sp.add_argument("--presets", default="web,cache,hadoop")
    sp.add_argument("--algorithms", default="noop,per_hop,per_flow,moving_average")
    sp.add_argument("--thresholds", default=",".join(map(str, bench.DEFAULT_THRESHOLDS)))
    sp.add_argument("--alpha", type=int, default=192, help="EWMA weight numerator over 256")
    sp.add_argument("--duration", type=float, help="seconds of trace time per cell (default: one pass)")
    sp.add_argument("--base-capacity", type=float, help="reports/s of one collector core (default: measured)")
    sp.add_argument("--parallel", type=int, default=1)
    sp.add_argument("--out", help="CSV path (default stdout)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("bench-collector", help="parse-capacity grid -> CSV")
    common(sp, packets=False)
    sp.add_argument("--items", default="1,4,8")
    sp.add_argument("--hops", default="1,2,4")
    sp.add_argument("--duration", type=float, default=5.0, help="seconds per cell")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_bench_collector)

    sp = sub.add_parser("compare", help="per-flow vs moving average event counts -> CSV")
    common(sp)
    sp.add_argument("--preset", choices=sorted(traffic.PRESETS), default="web")
    sp.add_argument("--thresholds", default=",".join(map(str, bench.DEFAULT_THRESHOLDS)))
    sp.add_argument("--alpha", type=int, default=192)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("collect", help="run one collector instance")
    sp.add_argument("--in", dest="input", default="channel", help="channel (length-prefixed stdin) | udp:<port>")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--sink", default="mem", help="mem | file:<path>")
    sp.add_argument("--stats-interval", type=float, default=1.0)
    sp.add_argument("--instance", type=int, default=0)
    sp.add_argument("--backpressure", choices=("block", "drop"), default="block")
    sp.add_argument("--idle-timeout", type=float, default=None, help="stop after this many idle seconds")
    sp.set_defaults(func=cmd_collect)

    sp = sub.add_parser("calibrate", help="report preset calibration targets")
    common(sp)
    sp.add_argument("--presets", default="web,cache,hadoop")
    sp.add_argument("--seeds", type=int, default=5)
    sp.add_argument("--thresholds", default="100,150")
    sp.set_defaults(func=cmd_calibrate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigError, traffic.TraceFormatError, ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
