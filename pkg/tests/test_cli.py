import csv
import subprocess
import sys

import numpy as np
import pytest

from spammkit import read_matrix_market
from spammkit.bench import CSV_COLUMNS, LEAF_COLUMNS, PROBE_COLUMNS
from spammkit.cli import main, read_config
from spammkit.errors import ConfigError

SMALL = ["--n", "256", "--task-size", "64", "--bs", "16", "--alpha", "0.05"]


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_gen_and_multiply_from_file(tmp_path):
    mtx = tmp_path / "a.mtx"
    assert main(["gen", *SMALL, "--out", str(mtx)]) == 0
    m = read_matrix_market(str(mtx), 64, 16)
    assert m.n_logical == 256
    out = tmp_path / "mult.csv"
    res = tmp_path / "c.mtx"
    assert main(["multiply", "--input", str(mtx), "--task-size", "64", "--bs", "16",
                 "--method", "exact,spamm", "--tau", "1e-6", "--out", str(out),
                 "--result", str(res)]) == 0
    table = rows(out)
    assert tuple(table[0]) == CSV_COLUMNS
    assert [r[0] for r in table[1:]] == ["exact", "spamm"]
    assert float(table[1][5]) < 1e-10
    c = read_matrix_market(str(res), 64, 16).to_dense()
    d = m.to_dense()
    assert np.allclose(c, d @ d, atol=1e-5)


def test_error_vs_tau(tmp_path, capsys):
    out = tmp_path / "t.csv"
    assert main(["error-vs-tau", *SMALL, "--method", "truncmul",
                 "--tau-list", "1e-3,1e-4,1e-5,1e-6,1e-7", "--out", str(out)]) == 0
    assert len(rows(out)) == 6
    assert "truncmul: slope vs tau" in capsys.readouterr().err


def test_error_vs_n(tmp_path):
    out = tmp_path / "n.csv"
    assert main(["error-vs-n", *SMALL, "--n-list", "64,128", "--method", "spamm",
                 "--out", str(out)]) == 0
    assert [r[1] for r in rows(out)[1:]] == ["64", "128"]


def test_matched_accuracy_stdout(capsys):
    assert main(["matched-accuracy", *SMALL, "--sigma", "1e-6", "--workers", "2",
                 "--tau-list", "1e-3,1e-5,1e-7,1e-9"]) == 0
    captured = capsys.readouterr()
    assert captured.out.splitlines()[0] == ",".join(CSV_COLUMNS)
    assert "gemm vs truncmul" in captured.err


def test_leaf_bench(tmp_path):
    out = tmp_path / "leaf.csv"
    assert main(["leaf-bench", "--n", "256", "--bs-list", "32", "--fill-list", "0,0.5",
                 "--out", str(out)]) == 0
    table = rows(out)
    assert tuple(table[0]) == LEAF_COLUMNS
    assert table[1][4] == "0"


def test_probe_command(tmp_path):
    out = tmp_path / "probe.csv"
    assert main(["lemma1-probe", "--alpha", "0.05", "--task-size", "64", "--bs", "16",
                 "--n-list", "256,512,1024,2048", "--eps", "1e-4",
                 "--eps-list", "1e-3,1e-4,1e-5,1e-6", "--n-eps", "512",
                 "--out", str(out)]) == 0
    assert tuple(rows(out)[0]) == PROBE_COLUMNS
    assert len(rows(out)) == 9


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nn = 128\n--task-size=32\nbs=8\nalpha=0.05\n"
                   "method = truncmul\nworkers = 3\n")
    out = tmp_path / "o.csv"
    assert main(["multiply", "--config", str(cfg), "--n", "64", "--out", str(out)]) == 0
    row = rows(out)[1]
    assert row[0] == "truncmul" and row[1] == "64" and row[2] == "32"


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("no equals sign\n")
    with pytest.raises(ConfigError):
        read_config(str(bad))
    bad.write_text("colour = blue\n")
    assert main(["multiply", "--config", str(bad)]) == 2


@pytest.mark.parametrize("argv", [
    ["multiply", "--n", "16", "--task-size", "6"],
    ["multiply", "--n", "16", "--task-size", "8", "--bs", "4", "--workers", "0"],
    ["matched-accuracy", "--n", "16", "--task-size", "8", "--bs", "4", "--sigma", "0"],
    ["gen", "--n", "16", "--task-size", "8", "--bs", "4"],
])
def test_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "spammkit: error:" in capsys.readouterr().err


def test_unknown_method_rejected():
    with pytest.raises(SystemExit):
        main(["multiply", "--method", "strassen"])


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "spammkit", "--help"], capture_output=True,
                          text=True, check=True)
    assert "matched-accuracy" in proc.stdout
