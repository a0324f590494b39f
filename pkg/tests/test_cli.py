"""Command-line driver: reports, exit codes and determinism."""

import csv
import json

import pytest

from elastix.cli import main
from elastix.mesh import load_msh, save_json, two_tets

SLIVER = {"vertices": [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0.3, 0.3, 0.02]], "tets": [[0, 1, 2, 3]]}
TET = {"vertices": [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], "tets": [[0, 1, 2, 3]]}


def run(tmp_path, *argv):
    return main(list(argv) + ["--out", str(tmp_path)])


def read_json(path):
    return json.loads(path.read_text())


def write_mesh(tmp_path, name, data):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return f"file:{path}"


def test_mesh_check_kuhn2(tmp_path):
    assert run(tmp_path, "mesh-check", "--mesh", "kuhn:2", "--kappa", "0.15") == 0
    rep = read_json(tmp_path / "mesh_check.json")
    assert rep["pass"] and not rep["violations"]
    assert rep["edge_kinds"]["Singular"] == len(rep["singular_edges"]) > 0


def test_mesh_check_sliver_fails(tmp_path, capsys):
    src = write_mesh(tmp_path, "sliver.json", SLIVER)
    assert run(tmp_path, "mesh-check", "--mesh", src) == 1
    rep = read_json(tmp_path / "mesh_check.json")
    assert [0, 1] in [v["vertices"] for v in rep["violations"]]
    assert "edge [0, 1]" in capsys.readouterr().out


def test_mesh_check_single_tet(tmp_path):
    src = write_mesh(tmp_path, "tet.json", TET)
    assert run(tmp_path, "mesh-check", "--mesh", src) == 0
    kinds = read_json(tmp_path / "mesh_check.json")["edge_kinds"]
    assert kinds["Boundary"] == 6 and sum(kinds.values()) == 6


@pytest.mark.parametrize("which,n", [("tet", 120), ("two", 201), ("kuhn", 498)])
def test_unisolvence_command(tmp_path, which, n):
    if which == "tet":
        src = write_mesh(tmp_path, "tet.json", TET)
    elif which == "two":
        save_json(two_tets(), tmp_path / "two.json")
        src = f"file:{tmp_path / 'two.json'}"
    else:
        src = "kuhn:1"
    assert run(tmp_path, "unisolvence", "--mesh", src) == 0
    rep = read_json(tmp_path / "unisolvence.json")
    assert rep["n_dofs"] == rep["dim_sigma_h"] == n and rep["pass"]
    assert (tmp_path / "dofs.json").exists()


def test_convergence_zero_load(tmp_path):
    assert run(tmp_path, "convergence", "--load", "zero") == 0
    rows = list(csv.DictReader((tmp_path / "convergence.csv").open()))
    assert len(rows) == 1
    assert all(float(rows[0][k]) == 0.0 for k in ("err_stress_l2", "err_stress_div", "err_disp_l2"))


def test_convergence_single_level_omits_rates(tmp_path):
    assert run(tmp_path, "convergence") == 0
    row = next(csv.DictReader((tmp_path / "convergence.csv").open()))
    assert row["rate_stress_l2"] == row["rate_disp_l2"] == ""
    assert float(row["residual"]) <= 1e-10
    assert "beta" not in row and "wall" not in "".join(row)


def test_infsup_command(tmp_path):
    assert run(tmp_path, "infsup", "--negative-control") == 0
    rep = read_json(tmp_path / "infsup.json")
    assert rep["levels"][0]["beta"] > 0
    assert rep["negative_control_flagged"] is True


def test_export_mesh(tmp_path):
    assert run(tmp_path, "export-mesh", "--mesh", "kuhn:2") == 0
    assert load_msh(tmp_path / "mesh.msh").n_tets == 48


@pytest.mark.parametrize(
    "argv",
    [
        ["mesh-check", "--mesh", "cube:1"],
        ["mesh-check", "--mesh", "kuhn:zero"],
        ["mesh-check", "--mesh", "file:/does/not/exist.msh"],
        ["mesh-check", "--kappa", "1.0"],
        ["convergence", "--levels", "4"],
        ["convergence", "--levels", "0"],
        ["unisolvence", "--lame", "1", "0"],
        ["mesh-check", "--seed", "-1"],
    ],
)
def test_input_errors_exit_2(tmp_path, argv):
    assert run(tmp_path, *argv) == 2


def test_parse_error_exit_2(tmp_path):
    bad = tmp_path / "bad.msh"
    bad.write_text("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n4\n1 0 0 0\n")
    assert run(tmp_path, "mesh-check", "--mesh", f"file:{bad}") == 2


def test_file_mesh_rejects_levels(tmp_path):
    src = write_mesh(tmp_path, "tet.json", TET)
    assert run(tmp_path, "convergence", "--mesh", src, "--levels", "2") == 2


def test_argparse_usage_error_exit_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2


def test_reports_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(d, "unisolvence", "--seed", "7") == 0
    assert (a / "unisolvence.json").read_bytes() == (b / "unisolvence.json").read_bytes()
    assert (a / "dofs.json").read_bytes() == (b / "dofs.json").read_bytes()
