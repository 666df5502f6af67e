import csv
import io
import struct
import sys
from fractions import Fraction

import pytest
from scipy.stats import spearmanr

from intforge import bench, cli
from intforge.bench import (
    CAPACITY_COLUMNS,
    CSV_COLUMNS,
    NO_EVENTS,
    InvariantViolation,
    SweepRow,
    SweepSpec,
    compare_algorithms,
    run_capacity_bench,
    run_sweep,
)
from intforge.collector import synthetic_reports
from intforge.detection import AlgorithmKind
from intforge.traffic import generate_trace, get_preset, trace_period

PF, PH, MA, NOOP = AlgorithmKind.PER_FLOW, AlgorithmKind.PER_HOP, AlgorithmKind.MOVING_AVERAGE, AlgorithmKind.NOOP


def small_spec(**kw):
    base = dict(presets=("web",), thresholds=(0, 50, 100, 150), n_packets=4000, base_capacity=1_000_000)
    base.update(kw)
    return SweepSpec(**base)


@pytest.fixture(scope="module")
def small_result():
    return run_sweep(small_spec())


def test_noop_row(small_result):
    r = small_result.row("web", NOOP, 0)
    assert r.pass_ratio == 1 and r.potential_capacity == r.base_capacity
    assert r.events == r.packets == 4000
    assert [x for x in small_result.rows if x.algorithm == "noop"] == [r]


def test_per_flow_pass_ratio_non_increasing(small_result):
    ratios = [small_result.row("web", PF, t).pass_ratio for t in (50, 100, 150)]
    assert ratios == sorted(ratios, reverse=True)


def test_capacity_identity_exact(small_result):
    for r in small_result.rows:
        if r.potential_capacity is not None:
            assert r.potential_capacity * r.pass_ratio == r.base_capacity
            assert r.potential_capacity >= r.base_capacity


def test_csv_schema(small_result):
    rows = list(csv.reader(io.StringIO(small_result.to_csv())))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 1 + len(small_result.rows)
    assert rows[1][:2] == ["web", "noop"] and rows[1][5] == "1" and rows[1][6] == "1000000"


def test_no_events_flag():
    r = SweepRow("web", "per_flow", 200, 10, 0, Fraction(5))
    assert r.potential_capacity is None and r.amplification is None
    assert r.csv_fields()[-1] == NO_EVENTS


def test_spec_validation():
    with pytest.raises(ValueError):
        SweepSpec(thresholds=(100, 50))
    with pytest.raises(ValueError):
        SweepSpec(base_capacity=0)


def test_check_row_catches_conservation_break():
    with pytest.raises(InvariantViolation):
        bench.check_row(SweepRow("web", "per_flow", 0, 10, 5, Fraction(1), forwarded=4))
    with pytest.raises(InvariantViolation):
        bench.check_row(SweepRow("web", "per_flow", 0, 10, 5, Fraction(1), forwarded=5, restored_ok=False))
    with pytest.raises(InvariantViolation):
        bench.check_row(SweepRow("web", "noop", 0, 10, 5, Fraction(1), forwarded=5))


def test_check_monotone_flags_increase():
    rows = [
        SweepRow("web", "per_hop", 0, 10, 3, Fraction(1)),
        SweepRow("web", "per_hop", 50, 10, 4, Fraction(1)),
    ]
    assert bench.check_monotone(bench.SweepResult(rows))


def test_parallel_matches_sequential(small_result):
    par = run_sweep(small_spec(parallel=2))
    assert par.to_csv() == small_result.to_csv()


def test_looped_sweep_scales_counts():
    one = run_sweep(small_spec(algorithms=(NOOP,), n_packets=500))
    period = trace_period(generate_trace(get_preset("web"), 500, 1))
    two = run_sweep(small_spec(algorithms=(NOOP,), n_packets=500, loop_ns=2 * period))
    assert two.rows[0].events == 2 * one.rows[0].events


def test_config_workload_override():
    cfg = bench.default_config()
    cfg["workloads"] = {"web": {"queue_cap_us": 20}}
    res = run_sweep(small_spec(config=cfg, algorithms=(PF,), thresholds=(25,)))
    # occupancy is capped at 20, so it never moves more than 25 from the zeroed register
    assert res.rows[0].events == 0
    assert res.to_csv().splitlines()[1].endswith(NO_EVENTS)


# -- compare ---------------------------------------------------------------------------


def test_compare_alpha_full_identical():
    recs = generate_trace(get_preset("cache"), 5000, 2)
    cmp = compare_algorithms("cache", (0, 25, 50, 100, 200), alpha_num=256, records=recs)
    assert cmp.per_flow == cmp.moving_average
    assert cmp.fraction_ma_le_pf == 1.0


def test_compare_small_alpha_reported():
    recs = generate_trace(get_preset("web"), 5000, 2)
    cmp = compare_algorithms("web", (0, 25, 50, 100), alpha_num=1, records=recs)
    assert 0.0 <= cmp.fraction_ma_le_pf <= 1.0
    assert cmp.fraction_ma_le_pf > 0.5
    assert compare_algorithms("web", (0, 25, 50, 100), alpha_num=1, records=recs).to_csv() == cmp.to_csv()


# -- capacity ----------------------------------------------------------------------------


def test_items_mask():
    assert [bench.items_mask(k) for k in (0, 1, 4, 8)] == [0x00, 0x80, 0xF0, 0xFF]
    with pytest.raises(ValueError):
        bench.items_mask(9)


def test_capacity_grid_shape():
    rows = run_capacity_bench(duration=0.05)
    assert [(k, h) for k, h, _ in rows] == [(k, h) for k in (1, 4, 8) for h in (1, 2, 4)]
    out = list(csv.reader(io.StringIO(bench.capacity_csv(rows))))
    assert tuple(out[0]) == CAPACITY_COLUMNS and len(out) == 10


@pytest.mark.slow
def test_capacity_grid_rank_stable():
    a = run_capacity_bench(duration=0.5)
    b = run_capacity_bench(duration=0.5)
    rho = spearmanr([r[2] for r in a], [r[2] for r in b])[0]
    assert rho >= 0.9
    grid = {(k, h): v for k, h, v in a}
    assert grid[(1, 1)] >= grid[(8, 4)]


# -- CLI ------------------------------------------------------------------------------


def test_cli_gen_and_run(tmp_path, capsys):
    trace = tmp_path / "t.jsonl"
    assert cli.main(["gen", "--preset", "cache", "--packets", "300", "--out", str(trace)]) == 0
    assert cli.main(["run", "--trace", str(trace)]) == 0
    assert '"forwarded"' in capsys.readouterr().out


def test_cli_sweep_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["sweep", "--presets", "web", "--thresholds", "0,100", "--packets", "1500", "--base-capacity", "3430000"]
    assert cli.main(args + ["--out", str(a)]) == 0
    assert cli.main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_cli_sweep_invariant_violation_exit_code(monkeypatch, tmp_path):
    def broken(spec):
        raise InvariantViolation("forced")

    monkeypatch.setattr(bench, "run_sweep", broken)
    assert cli.main(["sweep", "--base-capacity", "1", "--out", str(tmp_path / "x.csv")]) == 1


def test_cli_bad_config(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text('{"switches": [{"id": 1, "flows": [{"role": "sink", "algorithm": {"kind": "magic"}}]}]}')
    assert cli.main(["sweep", "--config", str(p), "--base-capacity", "1"]) == 2
    assert "magic" in capsys.readouterr().err


def test_cli_compare_and_bench(tmp_path):
    assert cli.main(["compare", "--packets", "2000", "--thresholds", "50,100", "--out", str(tmp_path / "c.csv")]) == 0
    assert (tmp_path / "c.csv").read_text().startswith("preset,alpha_num")
    out = tmp_path / "cap.csv"
    assert cli.main(["bench-collector", "--items", "1", "--hops", "1", "--duration", "0.05", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "items,hops,reports_per_s"


def test_cli_calibrate(capsys):
    assert cli.main(["calibrate", "--presets", "web", "--packets", "3000", "--seeds", "2"]) == 0
    assert '"amp@100"' in capsys.readouterr().out


def test_cli_collect_from_stdin_frames(tmp_path, monkeypatch, capsys):
    frames = synthetic_reports(0x30, 1, 5)
    data = b"".join(struct.pack("!H", len(f)) + f for f in frames) + struct.pack("!H", 3) + b"bad"
    out = tmp_path / "events.jsonl"

    class Stdin:
        buffer = io.BytesIO(data)

    monkeypatch.setattr(sys, "stdin", Stdin)
    assert cli.main(["collect", "--sink", f"file:{out}"]) == 0
    assert len(out.read_text().splitlines()) == 5
    text = capsys.readouterr()
    assert text.out.startswith("ts, pps, errors, forwarded")
    assert "errors=1" in text.err
