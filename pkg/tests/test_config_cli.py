import csv
import json

import numpy as np
import pytest

from peassim.cli import main
from peassim.config import ConfigError, ExperimentConfig, load_config, parse_config, parse_forcing_entries
from peassim.io import read_checkpoint

SMALL = """
[grid]
N1 = 12
N2 = 12
N3 = 12

[run]
spin_window = 2
spin_max_time = 100
duration = 1
sample_every = 0.5

[schedule]
n_steps = 12

[observation]
shells = 12

[squeeze]
shells = 1, 4, 12
n_pairs = 2

[defect]
shells = 1, 2, 3
"""


def write(tmp_path, text, name="exp.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


def rows(path):
    return list(csv.DictReader(path.open()))


# --- parsing --------------------------------------------------------------------

def test_defaults_roundtrip():
    cfg = ExperimentConfig()
    again = parse_config(cfg.to_text())
    assert again.to_dict() == cfg.to_dict()


def test_unknown_key_reports_line(tmp_path):
    path = write(tmp_path, "[physics]\nnu = 0.2\nviscosity = 1\n")
    with pytest.raises(ConfigError, match=r"exp\.ini:3: \[physics\] viscosity: unknown key"):
        load_config(path)


def test_unknown_section():
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("[physic]\nnu = 1\n")


@pytest.mark.parametrize("text", [
    "[grid]\nN1 = 7\n",
    "[physics]\nnu = -1\n",
    "[physics]\nnu = abc\n",
    "[schedule]\nalpha = 0.2\nbeta = 0.1\n",
    "[observation]\nshells = 2\nlambda_max = 4\n",
    "[integrator]\nscheme = RK2\n",
    "[squeeze]\ntimes = 5\n",
    "[physics]\nforcing = entries\n",
])
def test_constraint_violations_are_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_forcing_entries():
    entries = parse_forcing_entries("v1 1 0 0 1.0 0.0\nb 0 1 1 0 0.5", "x")
    assert len(entries) == 2
    with pytest.raises(ConfigError):
        parse_forcing_entries("w 1 0 0 1 0", "x")


# --- subcommands -------------------------------------------------------------------

def test_simulate_and_manifest(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--config", str(write(tmp_path, SMALL)), "--out", str(out), "--quiet"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate" and manifest["seed"] == 0 and "version" in manifest
    assert (out / "config.resolved.ini").exists()
    index = rows(out / "trajectory" / "index.csv")
    assert len(index) == 3
    U, t = read_checkpoint(out / "final.pea")
    assert t == pytest.approx(float(index[-1]["t"]))


def test_zero_forcing_decay(tmp_path):
    # without forcing the W2 norm never plateaus in relative terms; a loose tolerance ends the spin-up
    cfg = SMALL.replace("[run]\n", "[run]\nspin_tol = 0.5\n") + "\n[physics]\nforcing = none\n"
    out = tmp_path / "free"
    assert main(["simulate", "--config", str(write(tmp_path, cfg)), "--out", str(out), "--quiet"]) == 0
    norms = [float(r["norm_H"]) for r in rows(out / "trajectory" / "index.csv")]
    assert norms[0] > norms[1] > norms[2]


def test_restart_from_checkpoint_continues_exactly(tmp_path):
    cfg = SMALL.replace("duration = 1", "duration = 2").replace("sample_every = 0.5", "sample_every = 1")
    a = tmp_path / "a"
    assert main(["simulate", "--config", str(write(tmp_path, cfg)), "--out", str(a), "--quiet"]) == 0
    mid = a / "trajectory" / "state_00001.pea"
    cont = SMALL.replace("[run]\n", f"[run]\nreference = {mid}\n").replace("sample_every = 0.5", "sample_every = 1")
    b = tmp_path / "b"
    assert main(["simulate", "--config", str(write(tmp_path, cont, "b.ini")), "--out", str(b), "--quiet"]) == 0
    Ua, ta = read_checkpoint(a / "final.pea")
    Ub, tb = read_checkpoint(b / "final.pea")
    assert ta == pytest.approx(tb)
    assert np.abs(Ua.coeffs - Ub.coeffs).max() <= 1e-14 * np.abs(Ua.coeffs).max()


def test_assimilate_outputs_and_reproducibility(tmp_path):
    path = write(tmp_path, SMALL)
    outs = [tmp_path / "r1", tmp_path / "r2"]
    for out in outs:
        assert main(["assimilate", "--config", str(path), "--out", str(out), "--seed", "5", "--quiet"]) == 0
    for name in ("report.csv", "summary.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    report = rows(outs[0] / "report.csv")
    assert len(report) == 13
    summary = rows(outs[0] / "summary.csv")[0]
    assert summary["verdict"] in ("reliable", "not-reliable")
    assert json.loads((outs[0] / "manifest.json").read_text())["seed"] == 5


def test_seed_changes_output(tmp_path):
    path = write(tmp_path, SMALL)
    for seed in ("1", "2"):
        assert main(["assimilate", "--config", str(path), "--out", str(tmp_path / seed), "--seed", seed,
                     "--quiet"]) == 0
    assert (tmp_path / "1" / "report.csv").read_bytes() != (tmp_path / "2" / "report.csv").read_bytes()


def test_defect_table(tmp_path):
    out = tmp_path / "d"
    assert main(["defect", "--config", str(write(tmp_path, SMALL)), "--out", str(out), "--quiet"]) == 0
    table = rows(out / "defect.csv")
    assert [int(r["shells"]) for r in table] == [1, 2, 3]
    for r in table:
        assert float(r["defect_W1_estimate"]) == pytest.approx(float(r["defect_W1_closed"]), rel=0.01)
        assert float(r["norm_H"]) == pytest.approx(1.0, abs=1e-6)
    closed = [float(r["defect_W1_closed"]) for r in table]
    assert closed == sorted(closed, reverse=True)
    modes = rows(out / "modes.csv")
    assert float(modes[0]["lambda"]) == pytest.approx(1.0)


def test_squeeze_table(tmp_path):
    out = tmp_path / "s"
    assert main(["squeeze", "--config", str(write(tmp_path, SMALL)), "--out", str(out), "--quiet"]) == 0
    table = rows(out / "squeeze.csv")
    assert [int(r["shells"]) for r in table] == [1, 4, 12]
    q = [float(r["q_max"]) for r in table]
    assert q[0] >= q[1] >= q[2]


def test_config_error_exit_code(tmp_path, capsys):
    path = write(tmp_path, "[grid]\nN1 = 12\nbogus = 1\n")
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "x"), "--quiet"]) == 2
    assert "exp.ini:3" in capsys.readouterr().err


def test_missing_reference_is_config_error(tmp_path):
    cfg = SMALL.replace("[run]\n", "[run]\nreference = /nonexistent/ref.pea\n")
    rc = main(["simulate", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / "x"), "--quiet"])
    assert rc == 2


def test_numerical_failure_exit_code(tmp_path):
    cfg = SMALL + "\n[physics]\namplitude = 1e6\n\n[integrator]\ndt = 0.5\n"
    assert main(["simulate", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / "x"), "--quiet"]) == 3


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("PEASSIM_OUT", str(tmp_path / "env"))
    assert main(["defect", "--config", str(write(tmp_path, SMALL)), "--quiet"]) == 0
    assert (tmp_path / "env" / "defect.csv").exists()
