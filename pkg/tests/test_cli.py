import csv
import json
import os
import subprocess
import sys

import pytest

from dbmlab import cli, growth
from dbmlab.growth import GrowthConfig, grow
from dbmlab.lattice import Cluster


def run(*args, env=None):
    e = dict(os.environ, **(env or {}))
    return subprocess.run([sys.executable, "-m", "dbmlab.cli", *args], capture_output=True, text=True, env=e)


def write_cfg(tmp_path, name="cfg.json", **kw):
    p = tmp_path / name
    p.write_text(json.dumps(kw))
    return str(p)


MINIMAL = dict(dimension=2, eta=1.0, n_particles=100, seed=7)


def test_grow_minimal_trace(tmp_path):
    out = tmp_path / "t.jsonl"
    assert cli.main(["grow", "--config", write_cfg(tmp_path, **MINIMAL), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 101
    head = json.loads(lines[0])
    assert head["schema_version"] == cli.SCHEMA_VERSION and head["seed"] == 7
    assert head["config"]["n_particles"] == 100 and head["timestamps"]["written"] is None
    rec = json.loads(lines[1])
    assert {"n", "site", "omega", "r", "cap"} <= set(rec) and rec["n"] == 1


def test_grow_twice_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, **MINIMAL)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    cli.main(["grow", "--config", cfg, "--out", str(a)])
    cli.main(["grow", "--config", cfg, "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_threads_do_not_change_the_trace(tmp_path):
    cfg = write_cfg(tmp_path, dimension=2, eta=1.0, n_particles=300, seed=3, checkpoint_samples=3000)
    outs = []
    for threads in ("1", "2"):
        out = tmp_path / f"t{threads}.jsonl"
        r = run("--threads", threads, "grow", "--config", cfg, "--out", str(out))
        assert r.returncode == 0, r.stderr
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_seed_override_and_stamp(tmp_path):
    cfg = write_cfg(tmp_path, **MINIMAL)
    out = tmp_path / "t.jsonl"
    assert cli.main(["grow", "--config", cfg, "--seed", "99", "--stamp", "--out", str(out)]) == 0
    head = json.loads(out.read_text().splitlines()[0])
    assert head["seed"] == 99 and head["config"]["seed"] == 99
    assert head["timestamps"]["written"] is not None


@pytest.mark.parametrize("bad", [
    {"n_particles": 10, "etaa": 1.0},
    {"n_particles": "ten"},
    {"eta": 2.0, "measure_mode": "dla_fast"},
    {"walker": {"launch_factor": 1.0}},
    {"walker": {"typo": 1}},
    {"dimension": 5},
])
def test_invalid_config_exit_2(tmp_path, bad, capsys):
    assert cli.main(["grow", "--config", write_cfg(tmp_path, **bad)]) == 2
    assert "error:" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert cli.main(["grow", "--config", str(tmp_path / "nope.json")]) == 2


def test_runtime_abort_exit_3(tmp_path, monkeypatch):
    real = growth.cached_exact_profile
    calls = {"n": 0}

    def flaky(c, cap=10_000):
        calls["n"] += 1
        if calls["n"] == 4:
            raise RuntimeError("boom")
        return real(c, cap)

    monkeypatch.setattr(growth, "cached_exact_profile", flaky)
    out = tmp_path / "t.jsonl"
    cfg = write_cfg(tmp_path, eta=2.0, measure_mode="exact", n_particles=10)
    assert cli.main(["grow", "--config", cfg, "--out", str(out)]) == 3
    lines = out.read_text().splitlines()
    assert len(lines) == 4 and json.loads(lines[0])["complete"] is False


def test_exact_eta2_run_has_checkpoints(tmp_path):
    out = tmp_path / "t.jsonl"
    cfg = write_cfg(tmp_path, dimension=2, eta=2.0, n_particles=500, measure_mode="exact", seed=1)
    assert cli.main(["grow", "--config", cfg, "--out", str(out)]) == 0
    recs = [json.loads(l) for l in out.read_text().splitlines()[1:]]
    caps = [r for r in recs if r["cap"] is not None]
    assert len(recs) == 500 and len(caps) >= 20 and recs[-1]["cap"] is not None
    assert all(r["omega"] > 0 for r in recs)


def test_round_trip(tmp_path):
    for cfg in (GrowthConfig(n_particles=200, omega_every=3, omega_samples=100, checkpoint_samples=1000),
                GrowthConfig(dimension=3, n_particles=100, checkpoint_samples=500),
                GrowthConfig(eta=0.0, measure_mode="eden", n_particles=100, checkpoint_samples=200)):
        t = grow(cfg)
        p = tmp_path / "rt.jsonl"
        cli.write_trace(t, p)
        back = cli.read_trace(p)
        assert back.config == t.config
        assert back.steps == t.steps
        assert back.final_cluster.sites == t.final_cluster.sites
        assert back.final_cluster.boundary == t.final_cluster.boundary


def test_unknown_schema_refused(tmp_path, capsys):
    p = tmp_path / "t.jsonl"
    cli.write_trace(grow(GrowthConfig(n_particles=10)), p)
    lines = p.read_text().splitlines()
    head = json.loads(lines[0])
    head["schema_version"] = 99
    p.write_text("\n".join([json.dumps(head)] + lines[1:]) + "\n")
    assert cli.main(["verify", str(p)]) == 2
    assert "schema_version" in capsys.readouterr().err
    with pytest.raises(cli.SchemaError):
        cli.read_trace(p)


def _needle_trace(n):
    cfg = GrowthConfig(n_particles=n)
    steps = [growth.StepRecord(k, (k, 0), None, float(k)) for k in range(1, n + 1)]
    return growth.GrowthTrace(cfg, steps, Cluster.replay(2, [(k, 0) for k in range(1, n + 1)]))


def test_needle_trace_fails_verify(tmp_path, capsys):
    p = tmp_path / "needle.jsonl"
    cli.write_trace(_needle_trace(5000), p)
    rep = tmp_path / "rep.json"
    assert cli.main(["verify", str(p), "--out", str(rep)]) == 1
    doc = json.loads(rep.read_text())
    check = next(c for c in doc["checks"] if c["name"] == "radius_bound")
    assert check["status"] == "fail" and doc["passed"] is False
    assert "radius_bound" in capsys.readouterr().out


def test_oracle_outputs(tmp_path, capsys):
    out = tmp_path / "o.json"
    assert cli.main(["oracle", "--dimension", "2", "--eta", "1.0", "--depth", "1", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["shapes"]) == 4 and all(s["probability"] == pytest.approx(0.25) for s in doc["shapes"])
    assert len(doc["classes"]) == 1 and doc["classes"][0]["members"] == 4
    assert cli.main(["oracle", "--eta", "0.0", "--depth", "2"]) == 0
    doc = json.loads(capsys.readouterr().out)
    probs = sorted({round(s["probability"], 12) for s in doc["shapes"]})
    assert probs == [round(1 / 24, 12), round(2 / 24, 12)]
    assert cli.main(["oracle", "--eta", "2.0", "--depth", "3"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert sum(s["probability"] for s in doc["shapes"]) == pytest.approx(1.0, abs=1e-10)
    assert cli.main(["oracle", "--depth", "6"]) == 2


def test_lemma_sweep_command(capsys):
    assert cli.main(["lemma-sweep", "--dimension", "2", "--max-sites", "4"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert 0 < doc["c"] < doc["C"] and doc["instances"] > 0
    assert cli.main(["lemma-sweep", "--max-sites", "9"]) == 2


def test_export_headers_and_rows(tmp_path):
    t = grow(GrowthConfig(n_particles=300, omega_every=4, omega_samples=100, checkpoint_samples=1000,
                          capacity_checkpoint_every=50))
    p = tmp_path / "t.jsonl"
    cli.write_trace(t, p)
    for what, header in cli.EXPORTS.items():
        out = tmp_path / f"{what}.csv"
        assert cli.main(["export", str(p), what, "--out", str(out)]) == 0
        raw = out.read_bytes()
        assert raw.startswith((",".join(header) + "\r\n").encode())
        rows = list(csv.reader(raw.decode().splitlines()))
        assert rows[0] == header
        body = rows[1:]
        if what == "radius_series":
            ns = [int(r[0]) for r in body]
            assert ns == sorted(ns) and len(ns) == 300
        elif what == "spectra":
            assert len(body) == len(t.checkpoints()) * 9
            one = [r for r in body if float(r[2]) == 1.0]
            assert all(abs(float(r[3]) - 1) < 1e-9 for r in one)
        else:
            blanks = [r for r in body if r[1] == ""]
            assert blanks and len(body) == 300
            filled = [r for r in body if r[2] != ""]
            assert filled and all(float(r[2]) >= -0.05 for r in filled)


def test_export_unknown_series(tmp_path):
    p = tmp_path / "t.jsonl"
    cli.write_trace(grow(GrowthConfig(n_particles=10)), p)
    assert cli.main(["export", str(p), "bogus"]) == 2


def test_console_script_help():
    r = subprocess.run(["dbmlab", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("grow", "verify", "oracle", "export", "lemma-sweep"):
        assert cmd in r.stdout
    assert run("grow").returncode == 2
