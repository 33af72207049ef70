import csv

import pytest

from kprotect import harness
from kprotect.cli import main
from kprotect.errors import PlanError
from kprotect.plan import CompositionPlan

CONFIG = "sizes=1000\nk=3\nalpha=5\nbucket_size=100\nrepetitions=1\noptimizations=none\ndata_dir={data}\n"


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    harness.gen_data(5, [1000], 10, root)
    return root


def test_gen_data_shapes(data):
    lines = (data / "n1000" / "DS1.log").read_text().splitlines()
    assert len(lines) == 1000
    assert all(line.startswith("INS ") for line in lines)
    cities = {line.split("city=")[1] for line in lines}
    assert cities == {f"city{i}" for i in range(10)}
    ds1 = {int(line.split()[1]) for line in lines}
    ds2 = {int(line.split()[1]) for line in (data / "n1000" / "DS2.log").read_text().splitlines()}
    ds3 = {int(line.split()[1]) for line in (data / "n1000" / "DS3.log").read_text().splitlines()}
    assert ds2 < ds1 and ds3 == ds1
    consent = (data / "n1000" / "consent.txt").read_text().split()
    assert 0.12 < len(consent) / 1000 < 0.26


def test_gen_data_deterministic(tmp_path):
    harness.gen_data(9, [300], 4, tmp_path / "a")
    harness.gen_data(9, [300], 4, tmp_path / "b")
    for name in ("DS1.log", "DS2.log", "DS3.log", "consent.txt", "key.txt"):
        assert (tmp_path / "a/n300" / name).read_bytes() == (tmp_path / "b/n300" / name).read_bytes()


def test_config_parsing():
    cfg = harness.ExperimentConfig.parse("sizes=5000, 10000\nalpha=5,10\noptimizations=all\n# note\nk=5\n")
    assert cfg.dataset_sizes == (5000, 10000)
    assert cfg.alphas == (5, 10)
    assert cfg.optimizations == frozenset({"cache", "consent", "offline"})
    with pytest.raises(ValueError):
        harness.ExperimentConfig.parse("colour=blue\n")
    with pytest.raises(ValueError):
        harness.ExperimentConfig.parse("sizes=10\nk=5\nalpha=5\n")
    with pytest.raises(ValueError):
        harness.ExperimentConfig.parse("optimizations=turbo\n")
    with pytest.raises(ValueError):
        harness.ExperimentConfig.parse("just words\n")


def test_protected_and_unprotected_agree(data):
    ds = harness.load_dataset(data / "n1000", 100)
    plan = harness.default_plan(3, 5)
    rows = {}
    for mode, opts in (("unprotected", ()), ("protected", ()), ("protected", ("cache", "consent", "offline"))):
        out = harness.run_once(ds, plan, mode=mode, alpha=5, optimizations=frozenset(opts))
        rows[(mode, opts)] = {frozenset(r.items()) for r in out.table.rows}
        assert out.metrics["result_rows"] == len(out.table)
    assert len(set(map(frozenset, rows.values()))) == 1


def test_counts_deterministic(data):
    ds = harness.load_dataset(data / "n1000", 100)
    plan = harness.default_plan(3, 5)
    a = harness.run_once(ds, plan, mode="protected", alpha=5, optimizations=frozenset({"cache"}))
    b = harness.run_once(ds, plan, mode="protected", alpha=5, optimizations=frozenset({"cache"}))
    strip = lambda m: {k: v for k, v in m.items() if k != "wall_time_ms"}  # noqa: E731
    assert strip(a.metrics) == strip(b.metrics)
    assert a.transcript.messages() == b.transcript.messages()


def test_cli_run_and_audit(data, tmp_path, capsys):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text(CONFIG.format(data=data))
    plan = tmp_path / "plan.txt"
    plan.write_text(harness.default_plan(3, 5).to_text())
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--plan", str(plan), "--mode", "protected", "--out", str(out)]) == 0
    assert (out / "results.csv").exists() and (out / "transcript.ndjson").exists()
    with open(out / "metrics.csv") as fh:
        header = fh.readline().strip()
    assert header == ",".join(harness.METRICS_HEADER)
    capsys.readouterr()
    rc = main(["audit", "--transcript", str(out / "transcript.ndjson"), "--stores", str(data / "n1000")])
    assert rc == 0
    assert capsys.readouterr().out.startswith("pass: yes")


def test_cli_audit_fails_on_unprotected(data, tmp_path):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text(CONFIG.format(data=data))
    plan = tmp_path / "plan.txt"
    plan.write_text(harness.default_plan(3, 5).to_text())
    out = tmp_path / "raw"
    main(["run", "--config", str(cfg), "--plan", str(plan), "--mode", "unprotected", "--out", str(out)])
    assert main(["audit", "--transcript", str(out / "transcript.ndjson"), "--stores", str(data / "n1000")]) == 1


def test_plan_mismatch_diagnostic(data, tmp_path, capsys):
    cfg = harness.ExperimentConfig.parse(CONFIG.format(data=data))
    bad = CompositionPlan.parse("node X service=NOPE input=const:city=city0\nnode Y service=DS2 input=parent\nedge X Y\n")
    with pytest.raises(PlanError, match="NOPE"):
        harness.run(cfg, bad, "protected", tmp_path / "o")
    other_alpha = harness.default_plan(3, 7)
    with pytest.raises(PlanError, match="alpha"):
        harness.run(cfg, other_alpha, "protected", tmp_path / "o")
    cfg_file = tmp_path / "c.txt"
    cfg_file.write_text(CONFIG.format(data=data))
    plan_file = tmp_path / "p.txt"
    plan_file.write_text(other_alpha.to_text())
    assert main(["run", "--config", str(cfg_file), "--plan", str(plan_file), "--out", str(tmp_path / "o")]) == 2
    assert "alpha" in capsys.readouterr().err


def test_bench_rows(data, tmp_path):
    cfg = harness.ExperimentConfig.parse(CONFIG.format(data=data) + "optimizations=cache,offline\n")
    out = tmp_path / "bench.csv"
    rows = harness.bench(cfg, out)
    # unprotected + protected x {none, cache, offline, cache+offline}
    assert len(rows) == 5
    with open(out) as fh:
        parsed = list(csv.DictReader(fh))
    assert [r["optimizations"] for r in parsed] == ["none", "none", "cache", "offline", "cache+offline"]
    assert len({r["result_rows"] for r in parsed}) == 1
    assert all(r["alpha_k"] == "15" for r in parsed)


def test_cli_breach_prob(capsys):
    assert main(["breach-prob", "--alpha", "5", "--k", "5"]) == 0
    assert capsys.readouterr().out.strip() == "0.0016"


def test_cli_gen_data(tmp_path, capsys):
    assert main(["gen-data", "--seed", "1", "--sizes", "200,300", "--cities", "3", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "n300" / "DS3.log").exists()


def test_tcp_transport_run(data):
    ds = harness.load_dataset(data / "n1000", 100)
    plan = harness.default_plan(3, 5)
    a = harness.run_once(ds, plan, mode="protected", alpha=5, transport="tcp")
    b = harness.run_once(ds, plan, mode="protected", alpha=5)
    assert a.transcript.messages() == b.transcript.messages()


def test_ablations():
    assert harness.ablations(frozenset()) == [frozenset()]
    assert len(harness.ablations(frozenset({"cache", "consent", "offline"}))) == 5
