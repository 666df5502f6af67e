import random

import pytest

from intforge import traffic
from intforge.detection import AlgorithmConfig, AlgorithmKind, DetectorState, evaluate
from intforge.traffic import (
    BurstModelParams,
    DwellDist,
    TraceFormatError,
    TraceRecord,
    generate_trace,
    get_preset,
    read_trace,
    replay,
    write_trace,
)

WEB = get_preset("web")


def test_single_packet_trace():
    (rec,) = generate_trace(WEB, 1, seed=3)
    assert rec.ts == 0 and rec.queue_occupancy == 0


def test_zero_packets_rejected():
    with pytest.raises(ValueError):
        generate_trace(WEB, 0)


def test_same_seed_identical():
    assert generate_trace(WEB, 3000, 5) == generate_trace(WEB, 3000, 5)


def test_distinct_seeds_differ():
    for s in range(10):
        a = generate_trace(WEB, 500, 100 + 2 * s)
        b = generate_trace(WEB, 500, 101 + 2 * s)
        assert [r.ts for r in a] != [r.ts for r in b]


def test_timestamps_sorted_and_latency_law():
    p = WEB.params
    for rec in generate_trace(WEB, 5000, 2):
        (h,) = rec.hops
        assert h.egress_timestamp - h.ingress_timestamp == h.hop_latency
        assert h.hop_latency >= p.base_latency_ns
        assert 0 <= h.queue_occupancy <= p.queue_cap_us
    ts = [r.ts for r in generate_trace(WEB, 5000, 2)]
    assert ts == sorted(ts)


def test_clamp_holds_for_extreme_rates():
    p = BurstModelParams(
        DwellDist("exponential", 1000.0),
        DwellDist("exponential", 1000.0),
        packet_rate_burst=100_000,
        packet_rate_idle=100_000,
        queue_build_rate=50.0,
        queue_drain_rate=50.0,
        queue_cap_us=30.0,
    )
    occ = [r.queue_occupancy for r in generate_trace(p, 5000, 1)]
    assert max(occ) == 30 and min(occ) == 0


def test_multi_hop_and_empirical():
    p = BurstModelParams(
        DwellDist("empirical", table=(10.0, 20.0)),
        DwellDist("lognormal", 50.0, 0.5),
        packet_rate_burst=50_000,
        packet_rate_idle=1_000,
        queue_build_rate=1.0,
        queue_drain_rate=1.0,
        queue_cap_us=100.0,
        n_hops=3,
    )
    recs = generate_trace(p, 200, 1)
    assert all(len(r.hops) == 3 and [h.switch_id for h in r.hops] == [1, 2, 3] for r in recs)
    assert DwellDist("empirical", table=(10.0, 20.0)).mean == 15.0


def test_bad_params():
    with pytest.raises(ValueError):
        DwellDist("weibull")
    with pytest.raises(ValueError):
        BurstModelParams(DwellDist(), DwellDist(), -1, 1, 1, 1, 1)
    with pytest.raises(ValueError):
        get_preset("video")


def test_dwell_sample_means():
    rng = random.Random(1)
    for dist in (DwellDist("lognormal", 80.0, 0.9), DwellDist("exponential", 80.0)):
        m = sum(dist.sample(rng) for _ in range(40_000)) / 40_000
        assert m == pytest.approx(80.0, rel=0.05)


def test_web_bursts_shorter_and_shallower_than_cache():
    web, cache = get_preset("web").params, get_preset("cache").params
    assert web.burst_duration.mean < cache.burst_duration.mean
    w = traffic.trace_stats(generate_trace(get_preset("web"), 50_000, 1))
    c = traffic.trace_stats(generate_trace(get_preset("cache"), 50_000, 1))
    assert w["max_occupancy_us"] < c["max_occupancy_us"]


def test_preset_overrides():
    p = get_preset("web", {"queue_cap_us": 50, "burst_duration": {"mean_us": 10.0}, "flow_key": [1, 2, 3, 4, 6]})
    assert p.params.queue_cap_us == 50 and p.params.burst_duration.mean_us == 10.0
    assert p.params.burst_duration.sigma == 0.8
    assert p.params.flow_key.proto == 6


# -- files ---------------------------------------------------------------------


def test_empty_trace_roundtrip(tmp_path):
    p = tmp_path / "e.jsonl"
    assert write_trace([], p) == 0
    assert read_trace(p) == []


def test_200k_trace_roundtrip_byte_identical(tmp_path):
    recs = generate_trace(get_preset("hadoop"), 200_000, 9)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_trace(recs, a)
    back = read_trace(a)
    assert back == recs
    write_trace(back, b)
    assert a.read_bytes() == b.read_bytes()


def test_decreasing_timestamps_rejected(tmp_path):
    recs = generate_trace(WEB, 3, 1)
    p = tmp_path / "bad.jsonl"
    with pytest.raises(ValueError):
        write_trace([recs[2], recs[0]], p)
    p.write_text(traffic.record_to_json(recs[2]) + "\n" + traffic.record_to_json(recs[0]) + "\n")
    with pytest.raises(TraceFormatError) as e:
        read_trace(p)
    assert e.value.lineno == 2


def test_malformed_line_reports_line_number(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text(traffic.record_to_json(generate_trace(WEB, 1, 1)[0]) + "\n{not json\n")
    with pytest.raises(TraceFormatError) as e:
        read_trace(p)
    assert e.value.lineno == 2


# -- replay --------------------------------------------------------------------


def test_replay_prefix():
    recs = generate_trace(WEB, 1000, 1)
    cut = recs[500].ts
    out = list(replay(recs, cut))
    assert out == recs[:500]


def test_replay_two_loops():
    recs = generate_trace(WEB, 1000, 1)
    period = traffic.trace_period(recs)
    out = list(replay(recs, 2 * period))
    assert len(out) == 2000
    assert [r.ts for r in out] == sorted(r.ts for r in out)
    assert out[1000].ts == period and out[1000].hops == recs[0].hops


def test_replay_empty_rejected():
    with pytest.raises(ValueError):
        list(replay([], 10))


@pytest.mark.parametrize("k", [1, 2, 3])
def test_noop_loop_linearity(k):
    recs = generate_trace(WEB, 800, 4)
    cfg = AlgorithmConfig(AlgorithmKind.NOOP)
    st = DetectorState()
    one = sum(evaluate(st, r.flow_key, r.hops, cfg).event for r in recs)
    looped = sum(evaluate(st, r.flow_key, r.hops, cfg).event for r in replay(recs, k * traffic.trace_period(recs)))
    assert looped == k * one


def test_record_property():
    rec = generate_trace(WEB, 1, 1)[0]
    assert isinstance(rec, TraceRecord) and rec.queue_occupancy == rec.hops[-1].queue_occupancy
