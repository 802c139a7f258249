import csv
import json
import math
import os
import subprocess
import sys

import pytest

from choquard import __version__
from choquard.cli_reporting import Check, RunConfig, UsageError, main, parse_config, report_body


def run_main(argv, capsys):
    rc = main(argv)
    out = capsys.readouterr()
    return rc, out.out, out.err


def test_config_round_trip():
    cfg = RunConfig("reduce", mu=1.5, beta=-0.02, tau=0.25, trunc_radius=50.0, k=3, betas=(-0.02, -0.01),
                    lambdas=(1e3, 1e4, 1e5), grid="coarse", out="/tmp/x", formats=("csv", "json"), seed=7)
    back = parse_config(cfg.to_ini())
    assert back == cfg
    assert back.canonical() == cfg.canonical()
    assert list(cfg.canonical()) == sorted(cfg.canonical())


def test_config_validation():
    for kw in ({"mu": 4.0}, {"tau": 1.0}, {"beta": 0.0}, {"trunc_radius": 5.0}, {"k": 0}, {"betas": (0.1,)},
               {"grid": "huge"}, {"formats": ("xml",)}, {"seed": -1}):
        with pytest.raises(UsageError):
            RunConfig("constants", **kw)
    with pytest.raises(UsageError):
        RunConfig("plot")
    with pytest.raises(UsageError):
        parse_config("[bubble_core]\nmu = 2\n")
    with pytest.raises(UsageError):
        parse_config("[bubble_core]\nmu = two\n", "constants")


def test_check_lines():
    c = Check("reduce.r2", 0.95, 0.99, ">=")
    assert not c.passed and c.as_dict()["pass"] is False
    assert c.line().startswith("FAIL reduce.r2") and "0.95" in c.line() and "0.99" in c.line()
    assert not Check("x", math.nan, 1.0).passed
    assert Check("x", 1.0, 1.0).passed and not Check("x", 1.0, 1.0, "<").passed


def test_constants(capsys, tmp_path):
    rc, out, _ = run_main(["constants", "--mu", "2", "--out", str(tmp_path)], capsys)
    assert rc == 0
    body = json.loads((tmp_path / "constants.json").read_text())
    assert set(body) == {"config", "version", "results", "checks"}
    assert body["version"] == __version__
    res = body["results"]
    assert res["riesz_constant"] == pytest.approx(math.pi**2 / 2, rel=1e-14)
    assert res["alpha"] == pytest.approx(1.12838, abs=1e-5)
    assert "alpha = 1.128379" in out and "I(mu/2) = 4.934802" in out
    for c in body["checks"]:
        assert set(c) >= {"name", "value", "tolerance", "pass"}


def test_verify_identities_passes(capsys):
    rc, out, err = run_main(["verify-identities", "--mu", "2"], capsys)
    assert rc == 0 and err == ""
    assert out.count("PASS") >= 5 and "FAIL" not in out


def test_failure_exit_code_and_stderr(capsys):
    # the per-line d_beta spread exceeds its tolerance on this lower lambda range
    rc, out, err = run_main(["reduce", "--betas", "-0.02,-0.01,-0.005", "--lambdas", "100,1000,10000"], capsys)
    assert rc == 1
    assert "FAIL" in err and "measured" in err and "tolerance" in err
    assert all(ln.startswith("FAIL") for ln in err.strip().splitlines())


def test_reduce_json(capsys, tmp_path):
    rc, _, _ = run_main(["reduce", "--k", "2", "--mu", "2", "--betas", "-0.02,-0.01,-0.005", "--out",
                         str(tmp_path), "--format", "csv,json"], capsys)
    assert rc == 0
    body = json.loads((tmp_path / "reduce.json").read_text())
    assert body["config"]["betas"] == [-0.02, -0.01, -0.005]
    checks = {c["name"]: c for c in body["checks"]}
    assert all(c["pass"] for c in checks.values())
    with open(tmp_path / "reduce_checks.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["name"] for r in rows} == set(checks)


def test_determinism(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run_main(["error-norms", "--grid", "coarse", "--seed", "3", "--out", str(d)], capsys)[0] == 0
    ja = (a / "error_norms.json").read_bytes()
    jb = (b / "error_norms.json").read_bytes()
    cfg_a = json.loads(ja)["config"]
    assert cfg_a.pop("out") != json.loads(jb)["config"]["out"]
    # only the output path differs
    assert ja.replace(str(a).encode(), b"OUT") == jb.replace(str(b).encode(), b"OUT")


def test_report_body_is_stable():
    cfg = RunConfig("constants")
    checks = [Check("a", 1.0, 2.0)]
    assert report_body(cfg, {"x": 1.0}, checks) == report_body(cfg, {"x": 1.0}, checks)


def test_usage_errors(capsys, tmp_path):
    assert run_main(["constants", "--mu", "5"], capsys)[0] == 2
    assert run_main(["frobnicate"], capsys)[0] == 2
    assert run_main(["constants", "--grid", "huge"], capsys)[0] == 2
    assert run_main(["constants", "--config", str(tmp_path / "missing.ini")], capsys)[0] == 2
    blocked = tmp_path / "file"
    blocked.write_text("")
    rc, _, err = run_main(["constants", "--out", str(blocked / "sub")], capsys)
    assert rc == 2 and "not writable" in err


@pytest.mark.skipif(os.geteuid() == 0, reason="permission bits do not bind root")
def test_unwritable_directory(capsys, tmp_path):
    d = tmp_path / "ro"
    d.mkdir()
    d.chmod(0o500)
    try:
        assert run_main(["constants", "--out", str(d)], capsys)[0] == 2
    finally:
        d.chmod(0o700)


def test_config_file_with_flag_override(capsys, tmp_path):
    cfg = RunConfig("constants", mu=1.0, out=str(tmp_path / "o"))
    path = tmp_path / "run.ini"
    path.write_text(cfg.to_ini())
    assert run_main(["constants", "--config", str(path), "--mu", "3"], capsys)[0] == 0
    body = json.loads((tmp_path / "o" / "constants.json").read_text())
    assert body["config"]["mu"] == 3.0


def test_module_entry_point():
    p = subprocess.run([sys.executable, "-m", "choquard.cli_reporting", "constants", "--mu", "2"],
                       capture_output=True, text=True, timeout=120)
    assert p.returncode == 0 and "PASS" in p.stdout
