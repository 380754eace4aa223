"""End-to-end CLI behavior through main(argv), no subprocesses."""

import json
import os

import numpy as np
import pytest

from ldmlang.cli import main
from ldmlang.datatable import read_table

AR1 = """ProgramName: Tiny
Indices: t 0 19
a ~ N(0, 1)
sigma ~ HalfNormal(1)
y[0] ~ N(0, 1)
y[t] ~ N(a*y[t-1], sigma)
"""


@pytest.fixture()
def model_file(tmp_path):
    p = tmp_path / "tiny.ldm"
    p.write_text(AR1)
    return str(p)


@pytest.fixture()
def data_file(tmp_path):
    rng = np.random.default_rng(0)
    y = rng.normal(size=20)
    y[4] = np.nan
    lines = ["t,y"] + [f"{t},{'' if np.isnan(v) else repr(float(v))}"
                       for t, v in enumerate(y)]
    p = tmp_path / "data.csv"
    p.write_text("\n".join(lines) + "\n")
    return str(p)


def test_check_ok(model_file, capsys):
    assert main(["check", model_file]) == 0
    out = capsys.readouterr().out
    assert "ok" in out and "Tiny" in out


def test_check_reports_diagnostics(tmp_path, capsys):
    bad = tmp_path / "bad.ldm"
    bad.write_text("ProgramName: Bad\nx ~ N(qq, 1)\n")
    assert main(["check", str(bad)]) == 1
    err = capsys.readouterr().err
    assert "UndefinedVariable" in err


def test_check_syntax_error(tmp_path, capsys):
    bad = tmp_path / "bad.ldm"
    bad.write_text("x ~ N(0, 1)\n")
    assert main(["check", str(bad)]) == 1
    assert "ProgramName" in capsys.readouterr().err


def test_graph_writes_dot(model_file, tmp_path, capsys):
    out = tmp_path / "g.dot"
    assert main(["graph", model_file, "-o", str(out)]) == 0
    assert "digraph" in out.read_text()
    # without -o the DOT goes to stdout
    assert main(["graph", model_file]) == 0
    assert "cluster_cur" in capsys.readouterr().out


def test_simulate_writes_table_and_manifest(model_file, tmp_path, capsys):
    out = tmp_path / "sim.csv"
    assert main(["simulate", model_file, "--draws", "7", "--seed", "3",
                 "-o", str(out)]) == 0
    table = read_table(str(out), ("draw", "t"))
    assert table.n_rows == 7 * 20
    assert set(table.columns) == {"a", "sigma", "y"}
    man = json.loads((tmp_path / "sim.manifest.json").read_text())
    assert man["command"] == "simulate"
    assert man["seed"] == 3
    assert man["output"] == str(out)


def test_sample_needs_data(model_file, capsys):
    assert main(["sample", model_file]) == 1
    err = capsys.readouterr().err
    assert "ldm simulate" in err


def test_sample_needs_observed_vars(model_file, tmp_path, capsys):
    other = tmp_path / "other.csv"
    other.write_text("t,z\n0,1.0\n")
    assert main(["sample", model_file, "--data", str(other)]) == 1
    assert "no observed variables" in capsys.readouterr().err


def sample_args(model_file, data_file, out, seed=7):
    return ["sample", model_file, "--data", data_file, "-o", out,
            "--warmup", "150", "--samples", "100", "--chains", "2",
            "--seed", str(seed)]


def test_sample_end_to_end(model_file, data_file, tmp_path, capsys):
    out = tmp_path / "draws.csv"
    assert main(sample_args(model_file, data_file, str(out))) == 0
    header = out.read_text().splitlines()[0].split(",")
    # y[0] is observed data, so the sites are two parameters + one imputed cell
    assert header[:2] == ["chain", "draw"]
    assert header[2:] == ["a", "sigma", "y[4]"]
    assert len(out.read_text().splitlines()) == 1 + 2 * 100

    man = json.loads((tmp_path / "draws.manifest.json").read_text())
    assert man["tool"] == "ldm"
    assert man["command"] == "sample"
    assert man["obs"] == ["y"]
    assert man["mode"] == "FUSED"
    assert man["config"]["n_chains"] == 2
    assert man["data"] == [data_file]
    assert set(man["wall_clock_seconds"]) == {"compile", "sample"}
    assert man["wall_clock_seconds"]["sample"] > 0


def test_sample_is_bitwise_reproducible(model_file, data_file, tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    assert main(sample_args(model_file, data_file, str(a))) == 0
    assert main(sample_args(model_file, data_file, str(b))) == 0
    assert a.read_bytes() == b.read_bytes()


def test_no_optimize_flag_selects_unrolled(model_file, data_file, tmp_path):
    out = tmp_path / "u.csv"
    args = sample_args(model_file, data_file, str(out)) + ["--no-optimize"]
    assert main(args) == 0
    man = json.loads((tmp_path / "u.manifest.json").read_text())
    assert man["mode"] == "UNROLLED"


def test_summary_of_draws(model_file, data_file, tmp_path, capsys):
    out = tmp_path / "draws.csv"
    main(sample_args(model_file, data_file, str(out)))
    capsys.readouterr()
    json_out = tmp_path / "summary.json"
    assert main(["summary", str(out), "-o", str(json_out)]) == 0
    text = capsys.readouterr().out
    assert "r_hat" in text and " a " in text + " "
    rows = json.loads(json_out.read_text())
    assert [r["site"] for r in rows] == ["a", "sigma", "y[4]"]


def test_summary_rejects_non_draws_csv(data_file, capsys):
    assert main(["summary", data_file]) == 1
    assert "error:" in capsys.readouterr().err


def test_ic_reports_criteria(model_file, data_file, tmp_path, capsys):
    draws = tmp_path / "draws.csv"
    main(sample_args(model_file, data_file, str(draws)))
    capsys.readouterr()
    out = tmp_path / "ic.json"
    assert main(["ic", model_file, "--data", data_file,
                 "--draws", str(draws), "-o", str(out)]) == 0
    payload = json.loads(out.read_text())
    assert payload["k"] == 2  # a and sigma; imputed cells are not parameters
    assert payload["n"] == 19
    assert payload["aic"] == pytest.approx(2 * 2 + 2 * payload["nll"])
    printed = json.loads(capsys.readouterr().out)
    assert printed["bic"] == payload["bic"]


def test_ic_rejects_mismatched_draws(model_file, data_file, tmp_path, capsys):
    foreign = tmp_path / "foreign.csv"
    foreign.write_text("chain,draw,zz\n0,0,1.0\n0,1,2.0\n")
    assert main(["ic", model_file, "--data", data_file,
                 "--draws", str(foreign)]) == 1
    assert "site layout" in capsys.readouterr().err


def test_bench_grid(model_file, tmp_path, capsys):
    # fully observed data so the rate=0 cell has only parameter latents
    rng = np.random.default_rng(1)
    data = tmp_path / "full.csv"
    lines = ["t,y"] + [f"{t},{rng.normal()!r}" for t in range(20)]
    data.write_text("\n".join(lines) + "\n")
    out = tmp_path / "bench.csv"
    assert main(["bench", model_file, "--data", str(data),
                 "--sizes", "8,12", "--rates", "0,25",
                 "--warmup", "40", "--samples", "20", "--chains", "1",
                 "-o", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "size,miss_rate_pct,mode,latent_dim,seconds"
    assert len(rows) == 1 + 2 * 2 * 2  # sizes x rates x modes
    cells = [r.split(",") for r in rows[1:]]
    for size, rate, mode, dim, secs in cells:
        if float(rate) == 0:
            assert dim == "2"  # only a and sigma stay latent on full data
        assert float(secs) > 0
    assert any(int(c[3]) > 2 for c in cells if float(c[1]) > 0)
    modes = {c[2] for c in cells}
    assert modes == {"FUSED", "UNROLLED"}


def test_unknown_command_exits_nonzero():
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_missing_file_is_a_clean_error(capsys):
    assert main(["check", "/nonexistent/model.ldm"]) == 1
    assert "error:" in capsys.readouterr().err or \
        "No such file" in capsys.readouterr().err
