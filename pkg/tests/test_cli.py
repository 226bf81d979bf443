import csv
import io
import json
import subprocess
import sys

import pytest

from penalwalk import cli
from penalwalk.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, run


def invoke(capsys, *argv):
    code = run(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    body = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(body))))


def meta(text):
    return dict(ln[2:].split(": ", 1) for ln in text.splitlines() if ln.startswith("# "))


def test_law_first_passage(capsys):
    code, out, _ = invoke(capsys, "law", "first-passage-max", "--a", "1", "--kmax", "5")
    assert code == EXIT_OK
    first = rows(out)[0]
    assert (first["a"], first["k"], first["value"]) == ("1", "1", "1/2")
    assert meta(out)["verdict"] == "pass"


def test_law_name_flag_and_float(capsys):
    code, out, _ = invoke(capsys, "law", "--name", "first-passage-max", "--a", "1", "--kmax", "2", "--float")
    assert code == EXIT_OK
    assert [r["value"] for r in rows(out)] == ["0.5", "0.16666666666666666"]
    _, out, _ = invoke(capsys, "law", "first-passage-max", "--a", "1", "--kmax", "2", "--float", "--digits", "4")
    assert rows(out)[1]["value"] == "0.1667"


def test_verify_martingale(capsys):
    code, out, _ = invoke(capsys, "verify-martingale", "--family", "last-zero-max",
                          "--weight", "uniform:0..3", "--depth", "8")
    assert code == EXIT_OK
    row = rows(out)[0]
    assert row["worst_diff"] == "0/1" and row["passed"] == "true"


def test_identity_corridor(capsys):
    code, out, _ = invoke(capsys, "identity", "--name", "corridor", "--nmax", "6", "--abmax", "3")
    assert code == EXIT_OK
    assert meta(out)["failures"] == "0"


def test_adjudication_table(capsys):
    code, out, _ = invoke(capsys, "identity", "--name", "adjudication", "--depth", "10")
    assert code == EXIT_OK
    resolved = {r["item"]: r["resolved"] for r in rows(out)}
    assert resolved["return-max exponent"] == "a - 1"


def test_ratio_event(capsys):
    code, out, _ = invoke(capsys, "ratio", "--family", "max", "--weight", "point:2", "--event", "+-+",
                          "--pmin", "4", "--pmax", "8", "--pstep", "2")
    assert code == EXIT_OK
    assert [r["normalized"] for r in rows(out)] == ["1/8"] * 3


def test_sample_corridor(capsys):
    code, out, _ = invoke(capsys, "sample", "--kernel", "corridor", "--a", "2", "--b", "2",
                          "--steps", "20", "--seed", "1")
    assert code == EXIT_OK
    assert {int(r["x"]) for r in rows(out)} <= {-1, 0, 1}
    assert "Philox" in meta(out)["generator"]


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["law"],
    ["law", "no-such-law"],
    ["law", "first-passage-max", "--a", "x"],
    ["ratio", "--family", "max", "--weight", "nonsense:1", "--pmin", "2", "--pmax", "4"],
    ["verify-martingale", "--family", "max", "--depth"],
    ["asym"],
    ["simtest", "--test", "nope"],
    ["law", "first-passage-max", "--digits", "0", "--float"],
])
def test_usage_errors(capsys, argv):
    code, _, err = invoke(capsys, *argv)
    assert code == EXIT_USAGE
    assert err


def test_workers_validation(capsys, monkeypatch):
    monkeypatch.setenv("PENALWALK_WORKERS", "zero")
    with pytest.raises(cli.UsageError):
        cli.workers()
    monkeypatch.setenv("PENALWALK_WORKERS", "0")
    with pytest.raises(cli.UsageError):
        cli.workers()
    monkeypatch.setenv("PENALWALK_WORKERS", "2")
    assert cli.workers() == 2


def test_parse_grid():
    assert cli.parse_grid("1..3,7") == [1, 2, 3, 7]
    with pytest.raises(cli.UsageError):
        cli.parse_grid("5..1")
    with pytest.raises(cli.UsageError):
        cli.parse_grid("a")


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# first passage\ncommand = law\nname = first-passage-max\na = 1\nkmax = 3\n")
    code, out, _ = invoke(capsys, "--config", str(cfg))
    assert code == EXIT_OK and len(rows(out)) == 3
    # command-line flags override the file
    code, out, _ = invoke(capsys, "--config", str(cfg), "law", "--kmax", "2")
    assert code == EXIT_OK and len(rows(out)) == 2


@pytest.mark.parametrize("body,needle", [
    ("command = verify-martingale\ndepth = deep\n", ":2:"),
    ("command = verify-martingale\nbroken line\n", ":2:"),
    ("command = verify-martingale\nflavour = 3\n", ":2:"),
    ("command = simtest\nmeasure = R\n", ":2:"),
])
def test_config_errors_name_the_line(tmp_path, capsys, body, needle):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(body)
    code, _, err = invoke(capsys, "--config", str(cfg))
    assert code == EXIT_USAGE and needle in err


def test_out_dir_is_byte_identical(tmp_path, capsys):
    argv = ["law", "first-passage-max", "--amax", "3", "--kmax", "6"]
    for d in ("a", "b"):
        assert invoke(capsys, *argv, "--out", str(tmp_path / d))[0] == EXIT_OK
    one = (tmp_path / "a" / "law-first-passage-max.csv").read_bytes()
    assert one == (tmp_path / "b" / "law-first-passage-max.csv").read_bytes()


def test_simtest_writes_json(tmp_path, capsys):
    code, _, _ = invoke(capsys, "simtest", "--test", "kernel-frequency", "--kernel", "corridor",
                        "--a", "3", "--b", "2", "--lo", "-1", "--hi", "2", "--horizon", "100",
                        "--n-samples", "2000", "--out", str(tmp_path))
    assert code == EXIT_OK
    doc = json.loads((tmp_path / "simtest-kernel-frequency.json").read_text())
    assert doc["verdict"] is True


def test_failing_check_exits_one(capsys):
    code, _, _ = invoke(capsys, "verify-martingale", "--family", "corridor", "--a", "1", "--b", "1",
                        "--depth", "4")
    assert code == EXIT_FAIL


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "penalwalk", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "penalwalk" in res.stdout
