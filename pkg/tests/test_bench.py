import csv
import io

import pytest
from hypothesis import given, settings, strategies as st

from fastresume import bench
from fastresume.bench import ScenarioConfig, ScenarioTimeout, run_scenario, sweep
from fastresume.cli import main

from oracles import stop_and_wait_wct


@pytest.mark.parametrize("variant", ["baseline", "ipc", "tcs"])
@pytest.mark.parametrize("delay", [5, 30, 100])
def test_no_handover_wct_matches_closed_form(variant, delay):
    cfg = ScenarioConfig(variant=variant, delay_ms=delay, handover_period_ms=0)
    m = run_scenario(cfg)
    # the redirect leaves together with ServerFinished, so TCS costs no extra round trip
    assert m.wct_ms == stop_and_wait_wct(delay, 600, 20)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 50), st.integers(1, 40), st.integers(0, 30))
def test_closed_form_property(delay, n, think):
    cfg = ScenarioConfig(variant="ipc", delay_ms=delay, handover_period_ms=0, total_messages=n, think_ms=think)
    assert run_scenario(cfg).wct_ms == stop_and_wait_wct(delay, n, think)


def test_ipc_behind_port_restricted_nat_times_out():
    cfg = ScenarioConfig(variant="ipc", nat_mode="port-restricted", handover_period_ms=0, time_cap_ms=20_000)
    with pytest.raises(ScenarioTimeout) as info:
        run_scenario(cfg)
    assert info.value.metrics.handshakes_completed == 0
    assert info.value.metrics.acked == 0


def test_scenario_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(variant="quic")
    with pytest.raises(ValueError):
        ScenarioConfig(interfaces=3)
    with pytest.raises(ValueError):
        ScenarioConfig(delay_ms=-1)
    assert ScenarioConfig(variant="tcs", interfaces=2).label == "tcs-multi"


def small_base(**kw):
    kw.setdefault("total_messages", 120)
    kw.setdefault("handover_period_ms", 2000)
    kw.setdefault("repeats", 2)
    return ScenarioConfig(**kw)


def test_sweep_rows_and_gain_formula():
    rows = sweep(small_base(), [10, 40])
    assert [(r.delay_ms, r.variant) for r in rows] == [
        (d, v) for d in (10, 40) for v in ("baseline", "tcs", "tcs-multi")
    ]
    for r in rows:
        base = next(b for b in rows if b.delay_ms == r.delay_ms and b.variant == "baseline")
        expect = sum(100 * (b.wct_ms - x.wct_ms) / b.wct_ms for b, x in zip(base.runs, r.runs)) / len(r.runs)
        assert r.gain_pct == pytest.approx(expect)
    assert all(r.gain_pct == 0 for r in rows if r.variant == "baseline")


def test_sweep_parallel_matches_serial():
    a = sweep(small_base(), [10], jobs=1)
    b = sweep(small_base(), [10], jobs=2)
    assert [(r.wct_ms, r.gain_pct) for r in a] == [(r.wct_ms, r.gain_pct) for r in b]


def test_sweep_without_baseline_row():
    rows = sweep(small_base(), [10], variants=["tcs"])
    assert [r.variant for r in rows] == ["tcs"]


def test_report_empty_is_header_only():
    out = io.StringIO()
    text = bench.report([], out=out)
    assert text == "delay_ms,variant,wct_ms,gain_pct\n"


def test_report_writes_csv(tmp_path):
    rows = sweep(small_base(), [10])
    path = tmp_path / "out.csv"
    text = bench.report(rows, str(path), out=io.StringIO())
    assert path.read_text() == text
    parsed = list(csv.reader(io.StringIO(text)))
    assert parsed[0] == list(bench.CSV_HEADER)
    assert len(parsed) == 4
    assert all(len(r[3].split(".")[1]) == 2 for r in parsed[1:])


def test_format_table_includes_reference():
    row = bench.SweepRow(30, "tcs", 1000.0, 9.1)
    assert "13.63" in bench.format_table([row])


def test_reference_gains_table():
    assert bench.REFERENCE_GAINS[(5, "tcs")] == 8.35
    assert bench.REFERENCE_GAINS[(100, "tcs-multi")] == 23.42


def test_run_is_deterministic():
    cfg = small_base(variant="tcs", loss_rate=0.05, seed=3)
    a = bench.run_scenario(cfg, trace=True)
    b = bench.run_scenario(cfg, trace=True)
    assert a.trace == b.trace and a.wct_ms == b.wct_ms


def test_different_seeds_differ_under_loss():
    a = run_scenario(small_base(variant="tcs", loss_rate=0.1, seed=1))
    b = run_scenario(small_base(variant="tcs", loss_rate=0.1, seed=2))
    assert a.wct_ms != b.wct_ms


def test_config_round_trip(tmp_path):
    cfg = ScenarioConfig(variant="ipc", delay_ms=55, loss_rate=0.02, nat_mode="full-cone", handover_renumber=False)
    path = tmp_path / "s.conf"
    path.write_text(bench.dump_config(cfg))
    assert bench.load_config(str(path)) == cfg


def test_parse_config_errors():
    assert bench.parse_config("# note\n delay-ms = 7  # trailing\n") == {"delay_ms": 7}
    with pytest.raises(ValueError):
        bench.parse_config("nonsense = 1")
    with pytest.raises(ValueError):
        bench.parse_config("delay_ms")
    with pytest.raises(ValueError):
        bench.parse_config("handover_renumber = maybe")


# -- command line ------------------------------------------------------------

def test_cli_run(tmp_path, capsys):
    out = tmp_path / "one.csv"
    assert main(["run", "--variant", "tcs", "--delay-ms", "10", "--messages", "20", "--out", str(out)]) == 0
    assert "completed: True" in capsys.readouterr().out
    lines = out.read_text().splitlines()
    assert lines[0] == "delay_ms,variant,wct_ms,gain_pct" and len(lines) == 2
    assert lines[1].startswith("10,tcs,")


def test_cli_run_timeout_exit_status(capsys):
    status = main(["run", "--variant", "ipc", "--nat", "symmetric", "--messages", "5", "--time-cap-ms", "5000"])
    assert status == 1
    assert "error:" in capsys.readouterr().err


def test_cli_bad_config_path(capsys):
    assert main(["run", "--config", "/nonexistent/x.conf"]) == 2


def test_cli_sweep_csv_identical_across_runs(tmp_path, capsys):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p in paths:
        assert main(["sweep", "--delays", "10,20", "--messages", "60", "--repeats", "1",
                     "--handover-period-ms", "1500", "--out", str(p)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert len(paths[0].read_text().splitlines()) == 7
    assert "reference_gain_pct" in capsys.readouterr().out


def test_cli_trace_identical_and_config_file(tmp_path):
    conf = tmp_path / "s.conf"
    conf.write_text("variant = tcs\ndelay_ms = 10\ntotal_messages = 30\nhandover_period_ms = 400\n")
    outs = [tmp_path / "t1.txt", tmp_path / "t2.txt"]
    for p in outs:
        assert main(["trace", "--config", str(conf), "--out", str(p)]) == 0
    text = outs[0].read_text()
    assert outs[0].read_bytes() == outs[1].read_bytes()
    assert "IFACE cli/0 down" in text and "SRV tcs" in text
    # command line flags override the file
    assert main(["trace", "--config", str(conf), "--delay-ms", "20", "--out", str(outs[1])]) == 0
    assert outs[1].read_text() != text
