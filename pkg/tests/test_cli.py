import json
import subprocess
import sys

import numpy as np
import pytest

from mdfa.cli import COMMANDS, build_parser, run_cli


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    out = d / "d.csv"
    assert run_cli(["synth", "--m", "600", "--mu", "0.2", "--nu", "0.86", "--seed", "7",
                    "--out", str(out)]) == 0
    return d, out, d / "d.csv.schema.cfg"


@pytest.fixture(scope="module")
def predictions(tmp_path_factory):
    d = tmp_path_factory.mktemp("pred")
    rng = np.random.default_rng(0)
    m = 600
    X = rng.normal(size=(m, 2))
    s = rng.choice([0, 1], m)
    p = np.where(X[:, 0] > 0, np.where(s == 1, 0.9, 0.2), 0.5)
    pred = (rng.random(m) < p).astype(int)
    y = (rng.random(m) < 0.5).astype(int)
    lines = ["a,b,group,label,pred"] + [f"{x[0]!r},{x[1]!r},{g},{t},{q}"
                                         for x, g, t, q in zip(X.tolist(), s, y, pred)]
    (d / "p.csv").write_text("\n".join(lines) + "\n")
    (d / "p.cfg").write_text("feature_columns=a,b\nsensitive_column=group\nsensitive_positive=1\n"
                             "outcome_column=label\nprediction_column=pred\n")
    return d, d / "p.csv", d / "p.cfg"


def test_synth_outputs(synth):
    d, out, schema = synth
    rows = out.read_text().splitlines()
    assert rows[0] == "x1,x2,s,y,in_region" and len(rows) == 601
    truth = json.loads((d / "d.csv.truth.json").read_text())
    assert truth["m"] == 600 and truth["nu"] == 0.86
    assert "feature_columns=x1,x2" in schema.read_text()


def test_worst_report(synth):
    d, out, schema = synth
    report = d / "r.json"
    assert run_cli(["worst", "--input", str(out), "--schema", str(schema), "--alpha", "0.1",
                    "--scheme", "mmd", "--dim", "64", "--out", str(report)]) == 0
    r = json.loads(report.read_text())
    assert r["mode"] == "wva" and r["n_splits"] == 1
    assert r["aggregates"]["delta_m_mean"] > 0
    assert r["trace"] and r["profile"]["subgroup_size"] > 0
    assert r["config_echo"]["alpha_floor"] == 0.1


def test_worst_tsv_trace(synth, capsys):
    d, out, schema = synth
    assert run_cli(["worst", "--input", str(out), "--schema", str(schema), "--alpha", "0.1",
                    "--dim", "32", "--format", "tsv", "--max-iter", "5"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split("\t")[:3] == ["t", "delta_hat", "alpha_hat"]
    assert 2 <= len(lines) <= 6


def _commands(synth, predictions, out_dir):
    d, data, schema = synth
    _, pdata, pschema = predictions
    common = ["--seed", "3"]
    return {
        "synth": ["synth", "--m", "300", "--delta", "1.5", "--seed", "3",
                  "--out", str(out_dir / "s.csv")],
        "certify": ["certify", "--input", str(data), "--schema", str(schema), "--splits", "2",
                    "--scheme", "uw", "--dim", "32", "--cv-lambdas", "0.01,1",
                    "--out", str(out_dir / "c.json")] + common,
        "worst": ["worst", "--input", str(data), "--schema", str(schema), "--alpha", "0.1",
                  "--dim", "32", "--format", "tsv", "--out", str(out_dir / "w.tsv")] + common,
        "compare-weights": ["compare-weights", "--mu-grid", "0,0.2", "--m", "400", "--seeds", "1",
                            "--format", "tsv", "--out", str(out_dir / "cw.tsv")] + common,
        "profile": ["profile", "--input", str(data), "--schema", str(schema),
                    "--subgroup-column", "in_region", "--out", str(out_dir / "p.json")] + common,
        "audit-predictions": ["audit-predictions", "--input", str(pdata), "--schema", str(pschema),
                              "--alpha", "0.1", "--dim", "32", "--splits", "2",
                              "--out", str(out_dir / "ap.json")] + common,
    }


def _outputs(out_dir):
    return {p.name: p.read_bytes() for p in sorted(out_dir.iterdir())}


def test_every_command_byte_identical(synth, predictions, tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    first.mkdir()
    second.mkdir()
    cmds_a = _commands(synth, predictions, first)
    cmds_b = _commands(synth, predictions, second)
    assert set(cmds_a) == set(COMMANDS)
    for name in cmds_a:
        assert run_cli(cmds_a[name]) == 0, name
        assert run_cli(cmds_b[name]) == 0, name
    a, b = _outputs(first), _outputs(second)
    assert a.keys() == b.keys() and len(a) == 8  # synth writes three files
    for name in a:
        assert a[name] == b[name], name
    assert not any(n.endswith(".tmp") for n in a)


def test_profile_tsv(synth, capsys):
    _, data, schema = synth
    assert run_cli(["profile", "--input", str(data), "--schema", str(schema), "--format", "tsv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "scope\ts\tvariable\tmean\tstd"
    assert len(lines) == 1 + 2 * 2 * 3


@pytest.mark.parametrize("command", sorted(COMMANDS))
def test_help(command, capsys):
    assert run_cli([command, "--help"]) == 0
    text = capsys.readouterr().out
    sub = build_parser()._subparsers._group_actions[0].choices[command]
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in text


def test_usage_errors(synth, capsys):
    _, data, schema = synth
    assert run_cli([]) == 1
    assert run_cli(["worst", "--input", str(data)]) == 1
    assert run_cli(["certify", "--input", str(data), "--schema", str(schema), "--bogus"]) == 1
    assert run_cli(["certify", "--input", str(data), "--schema", str(schema),
                    "--target-y", "2"]) == 1
    assert run_cli(["audit-predictions", "--input", str(data), "--schema", str(schema)]) == 1
    assert "error" in capsys.readouterr().err


def test_data_errors(synth, tmp_path, capsys):
    _, data, schema = synth
    bad = tmp_path / "bad.cfg"
    bad.write_text("feature_columns=x1,zz\nsensitive_column=s\noutcome_column=y\n")
    out = tmp_path / "never.json"
    code = run_cli(["certify", "--input", str(data), "--schema", str(bad), "--out", str(out)])
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "SchemaError" and "zz" in err["message"]
    assert not out.exists() and not list(tmp_path.glob("*.tmp"))
    assert run_cli(["certify", "--input", str(tmp_path / "missing.csv"), "--schema", str(schema)]) == 2
    assert run_cli(["worst", "--input", str(data), "--schema", str(schema), "--alpha", "0.95",
                    "--dim", "16", "--out", str(out)]) == 2
    assert not out.exists()


def test_entry_point_subprocess(synth):
    _, data, schema = synth
    proc = subprocess.run([sys.executable, "-m", "mdfa", "certify", "--input", str(data),
                           "--schema", str(schema), "--dim", "16", "--scheme", "uw"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["mode"] == "certify"
    proc = subprocess.run([sys.executable, "-m", "mdfa", "nope"], capture_output=True, text=True)
    assert proc.returncode == 1
