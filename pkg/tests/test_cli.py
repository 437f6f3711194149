import json

import pytest

from parapot.cli import main


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


BOX = {"kind": "box", "lo": [0, 0], "hi": [1, 1], "T": 0.5}


def test_constants_table(tmp_path):
    inp = write(tmp_path / "n2.json", {"N": 2})
    assert main(["--out-dir", str(tmp_path), "constants", "--inputs", inp]) == 0
    lines = (tmp_path / "table.csv").read_text().splitlines()
    assert lines[0].startswith("# config_sha256: ")
    row = next(l for l in lines if l.startswith("c19,"))
    assert float(row.split(",")[1]) == pytest.approx(0.31831, rel=1e-5)
    prov = json.loads((tmp_path / "table.json").read_text())
    assert "c19" in prov["provenance"]["entries"]


def test_empty_solve(tmp_path):
    spec = write(tmp_path / "p.json", {"domain": BOX, "kind": "absorption", "omega": {}, "mu": {}, "nx": 8, "nt": 8})
    assert main(["--out-dir", str(tmp_path), "solve", "--spec", spec]) == 0
    rows = [l for l in (tmp_path / "solution.csv").read_text().splitlines() if not l.startswith("#")]
    assert rows[0] == "x1,x2,t,value,is_infinite"
    assert all(r.split(",")[3] == "0" for r in rows[1:])
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["status"] == "PASS" and "provenance" in rep and "config_sha256" in rep


def test_malformed_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"N": 2,\n "x": }')
    assert main(["constants", "--inputs", str(bad)]) == 2
    assert "bad.json:2:7" in capsys.readouterr().err


def test_schema_violation(tmp_path, capsys):
    spec = write(tmp_path / "p.json", {"kind": "linear"})
    assert main(["--out-dir", str(tmp_path), "solve", "--spec", spec]) == 2
    assert "config.domain" in capsys.readouterr().err


def test_potential_byte_identical_across_workers(tmp_path):
    m = write(tmp_path / "m.json", {"domain": BOX, "atoms": [{"x": [0.3, 0.4], "t": 0.1, "w": 0.5},
                                                              {"x": [0.7, 0.6], "t": 0.3}]})
    p = write(tmp_path / "p.json", {"R": 2.0})
    args = ["potential", "--kind", "wolff", "--measure", m, "--params", p, "--grid", "8x8x8"]
    assert main(["--out-dir", str(tmp_path / "a")] + args) == 0
    assert main(["--workers", "3", "--out-dir", str(tmp_path / "b")] + args) == 0
    a = (tmp_path / "a" / "wolff.csv").read_bytes()
    assert a == (tmp_path / "b" / "wolff.csv").read_bytes()
    assert b"# provenance: " in a


def test_green_probes(tmp_path):
    cfg = write(tmp_path / "g.json", {"domain": BOX, "omega": {"atoms": [{"x": [0.5, 0.5], "w": 1}]}})
    probes = tmp_path / "probes.csv"
    probes.write_text("x1,x2,t\n0.5,0.5,0.01\n")
    assert main(["--out-dir", str(tmp_path), "green", "--config", cfg, "--probe", str(probes)]) == 0
    last = (tmp_path / "vals.csv").read_text().splitlines()[-1]
    assert float(last.split(",")[-1]) == pytest.approx(1 / (4 * 3.141592653589793 * 0.01), rel=1e-8)


def test_verify_exit_codes(tmp_path):
    ok = write(tmp_path / "w.json", {"domain": BOX, "measure": {"atoms": [{"x": [0.3, 0.4], "t": 0.1}]}, "n": 8})
    assert main(["--out-dir", str(tmp_path), "verify", "--check", "wolffdom", "--spec", ok]) == 0
    rep = json.loads((tmp_path / "verify_wolffdom.json").read_text())
    assert rep["status"] == "PASS"
    inapp = write(tmp_path / "i.json", {"domain": BOX, "omega": {"atoms": [{"x": [0.5, 0.5]}]}, "n": 8, "t": [0.1]})
    assert main(["--out-dir", str(tmp_path), "verify", "--check", "initexp", "--spec", inapp]) == 0


def test_batch_runner(tmp_path):
    cfg = write(tmp_path / "run.json", {"runs": [{"command": "constants", "N": 2},
                                                  {"command": "constants", "N": 3}]})
    assert main(["--out-dir", str(tmp_path / "o"), "run", cfg]) == 0
    summary = (tmp_path / "o" / "summary.csv").read_text().splitlines()
    assert summary[1] == "run,command,exit_code,status" and len(summary) == 4


def test_runner_unknown_command(tmp_path):
    cfg = write(tmp_path / "run.json", {"runs": [{"command": "explode"}]})
    assert main(["--out-dir", str(tmp_path), "run", cfg]) == 2
