import csv
import json

import numpy as np
import pytest

import hpfrac
from hpfrac import cli
from hpfrac.assembly import load_system
from hpfrac.solve import SolveError


def write_cfg(tmp_path, text):
    p = tmp_path / "cfg.yaml"
    p.write_text(text)
    return str(p)


def read_csv(path):
    lines = [ln for ln in open(path) if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def test_mesh_report(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "polygon: square\nsigma: 0.5\nL_list: [3]\n")
    out = tmp_path / "out"
    assert cli.main(["mesh-report", "--config", cfg, "--out", str(out)]) == cli.EXIT_OK
    data = json.loads((out / "mesh_report.json").read_text())
    rep = data["reports"][0]
    assert rep["elements"] == 80 and rep["hanging_nodes"] == 0
    assert rep["layers"] == {"L0": 32, "L1": 24, "Lint": 24}
    assert len(rep["mesh"]["elements"]) == 80 and len(rep["mesh"]["vertices"]) == rep["vertices"]
    assert rep["mesh"]["params"]["sigma"] == 0.5
    assert data["version"] == hpfrac.__version__ and data["config"]["sigma"] == 0.5


def test_single_level_converge_has_empty_fit(tmp_path):
    cfg = write_cfg(tmp_path, "polygon: square\nL_list: [1]\n")
    out = tmp_path / "out"
    assert cli.main(["converge", "--config", cfg, "--out", str(out)]) == cli.EXIT_OK
    rows = read_csv(out / "converge.csv")
    assert len(rows) == 1
    assert rows[0]["fit_b"] == rows[0]["fit_C"] == rows[0]["fit_r2"] == ""
    assert float(rows[0]["energy"]) > 0
    assert open(out / "converge.csv").readline().startswith("# hpfrac " + hpfrac.__version__)


def test_deterministic_rerun_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, "polygon: lshape\ns: 0.3\nL_list: [1, 2]\nref_offset: 1\n")
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        args = ["converge", "--config", cfg, "--out", str(out), "--deterministic", "--seed", "7"]
        assert cli.main(args) == cli.EXIT_OK
        outs.append(out)
    for f in ("converge.csv", "converge.json"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    rows = read_csv(outs[0] / "converge.csv")
    assert [r["wallclock_s"] for r in rows] == ["", ""]
    assert float(rows[1]["err_estimate"]) < float(rows[0]["err_estimate"])


def test_solve_and_assemble_check_with_dump(tmp_path):
    cfg = write_cfg(tmp_path, "polygon: square\nL_list: [1, 2]\nsymmetry: false\n")
    out = tmp_path / "out"
    assert cli.main(["solve", "--config", cfg, "--out", str(out), "--deterministic"]) == cli.EXIT_OK
    energies = [float(r["energy"]) for r in read_csv(out / "solve.csv")]
    assert energies[1] > energies[0] > 0
    assert cli.main(["assemble-check", "--config", cfg, "--out", str(out), "--dump"]) == cli.EXIT_OK
    res = json.loads((out / "assemble_check.json").read_text())["results"]
    for r in res:
        assert r["max_asymmetry"] == 0 and r["min_eigenvalue"] > 0 and r["galerkin_residual"] <= 1e-8
    assert res[1]["energy"] == pytest.approx(energies[1], rel=1e-12)
    dump = load_system(out / res[1]["dump"])
    assert dump["N"] == res[1]["N"] and dump["L"] == 2
    c = np.linalg.solve(dump["A"], dump["b"])
    assert dump["b"] @ c == pytest.approx(energies[1], rel=1e-10)


def test_patch_study_csv(tmp_path):
    cfg = write_cfg(tmp_path, "s: [0.5]\nL_list: [2, 3, 4]\n")
    out = tmp_path / "out"
    assert cli.main(["patch-study", "--config", cfg, "--out", str(out)]) == cli.EXIT_OK
    rows = read_csv(out / "patch_study.csv")
    assert len(rows) >= 3


@pytest.mark.parametrize("text", ["s: 1.5\n", "polygon: hexagon\n", "L_list: [3, 2]\n", "bogus: 1\n",
                                  "quadrature: {gauss_order: -1}\n", "[unclosed\n", "q_rule: L^2\n"])
def test_bad_config_exit_code(tmp_path, text):
    cfg = write_cfg(tmp_path, text)
    out = tmp_path / "out"
    assert cli.main(["solve", "--config", cfg, "--out", str(out)]) == cli.EXIT_CONFIG
    err = json.loads((out / "error.json").read_text())
    assert err["exit_code"] == 2 and err["problems"]


def test_missing_config_file(tmp_path):
    assert cli.main(["solve", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)]) == 2


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    def broken(*a, **k):
        raise SolveError("matrix is not positive definite at pivot 4", 4)

    monkeypatch.setattr(cli, "solve_level", broken)
    out = tmp_path / "out"
    assert cli.main(["solve", "--out", str(out)]) == cli.EXIT_NUMERIC
    err = json.loads((out / "error.json").read_text())
    assert err["type"] == "SolveError" and err["pivot"] == 4 and "config" in err


def test_version_flag(capsys):
    with pytest.raises(SystemExit):
        cli.main(["--version"])
    assert hpfrac.__version__ in capsys.readouterr().out
