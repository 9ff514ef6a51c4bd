import csv
import json

import numpy as np
import pytest
import yaml

from conftest import LAMBDA1
from vanishing_neumann.cli import ConfigError, main, save_field, validate_config
from vanishing_neumann.fem.solvers import Field
from vanishing_neumann.geometry.halfball import build_half_ball_mesh

FAST = {"h_far": 0.15, "count": 1}


def write_cfg(tmp_path, cfg, name="run.json"):
    p = tmp_path / name
    if name.endswith(".json"):
        p.write_text(json.dumps(cfg))
    else:
        p.write_text(yaml.safe_dump(cfg))
    return str(p)


def base(**numerics):
    return {"domain": {"kind": "half_ball", "radius": 1.0},
            "patch": {"kind": "disk", "radius": 1.0},
            "numerics": {**FAST, **numerics}}


def run(tmp_path, cfg, command, *extra, out="out", name="run.json"):
    return main([command, "--config", write_cfg(tmp_path, cfg, name),
                 "--out", str(tmp_path / out), *extra])


def test_validation_messages():
    with pytest.raises(ConfigError, match="missing key radius in domain"):
        validate_config({"domain": {"kind": "half_ball"}})
    with pytest.raises(ConfigError, match="unknown key foo"):
        validate_config({"domain": {"radius": 1.0, "foo": 1}})
    with pytest.raises(ConfigError, match="diameter constraint"):
        validate_config({"domain": {"radius": 1.0}, "sweep": {"epsilon": 0.8}})
    cfg = validate_config({"domain": {"radius": 1.0}})
    assert cfg["numerics"]["R_list"] == [4.0, 8.0, 16.0]


def test_config_errors_exit_3(tmp_path, capsys):
    assert run(tmp_path, {"domain": {"kind": "half_ball"}}, "mesh") == 3
    assert "radius" in capsys.readouterr().err
    assert main(["mesh"]) == 3
    with pytest.raises(SystemExit) as info:
        main(["nonsense"])
    assert info.value.code == 3


def test_mesh_command(tmp_path):
    assert run(tmp_path, base(), "mesh") == 0
    header = (tmp_path / "out" / "mesh.txt").read_text().splitlines()[0]
    assert header.split()[0] == "3"
    info = json.loads((tmp_path / "out" / "mesh.json").read_text())
    assert info["volume"] == pytest.approx(2 * np.pi / 3, rel=0.01)
    assert info["min_dihedral_angle_deg"] > 5


def test_eig_dirichlet_and_determinism(tmp_path):
    cfg = base()
    assert run(tmp_path, cfg, "eig", out="a") == 0
    assert run(tmp_path, cfg, "eig", out="b") == 0
    a = (tmp_path / "a" / "spectrum.json").read_bytes()
    assert a == (tmp_path / "b" / "spectrum.json").read_bytes()
    lam = json.loads(a)["eigenvalues"][0]
    assert abs(lam - LAMBDA1) / LAMBDA1 < 0.02


def test_eig_mixed_modes(tmp_path):
    assert run(tmp_path, base(boundary="neumann_face"), "eig", out="nf") == 0
    lam = json.loads((tmp_path / "nf" / "spectrum.json").read_text())["eigenvalues"][0]
    assert abs(lam - np.pi ** 2) / np.pi ** 2 < 0.02
    run(tmp_path, base(), "eig", out="d")
    mixed = {**base(boundary="mixed"), "sweep": {"epsilon": 0.0}}
    assert run(tmp_path, mixed, "eig", out="m") == 0
    d = json.loads((tmp_path / "d" / "spectrum.json").read_text())["eigenvalues"]
    m = json.loads((tmp_path / "m" / "spectrum.json").read_text())["eigenvalues"]
    assert d == m


def test_yaml_config(tmp_path):
    assert run(tmp_path, base(), "mesh", name="run.yaml") == 0


def test_profile_zero_psi(tmp_path, capsys):
    cfg = base(h_rim=0.05, psi={"gamma": 1, "coefficients": [0.0]})
    assert run(tmp_path, cfg, "profile") == 0
    assert "warning" in capsys.readouterr().err
    rep = json.loads((tmp_path / "out" / "profile.json").read_text())["report"]
    assert rep["C"] == 0


def test_frequency_command(tmp_path):
    mesh = build_half_ball_mesh(1.0, 0.08)
    f = tmp_path / "xn.npz"
    save_field(f, Field(mesh, mesh.vertices[:, 2]), 0.0)
    assert run(tmp_path, base(), "frequency", "--field", str(f), "--lambda", "0") == 0
    with open(tmp_path / "out" / "frequency.csv") as fh:
        N = [float(r["N"]) for r in csv.DictReader(fh)]
    assert len(N) >= 3 and np.allclose(N, 1.0, atol=0.02)
    assert run(tmp_path, base(), "frequency", "--field", str(f)) == 3


def test_frequency_of_eigenfield(tmp_path):
    cfg = base(h_far=0.12, grading={"h_origin": 0.01})
    assert run(tmp_path, cfg, "eig", out="e") == 0
    f = tmp_path / "e" / "field_1.npz"
    lam = json.loads((tmp_path / "e" / "spectrum.json").read_text())["eigenvalues"][0]
    assert run(tmp_path, cfg, "frequency", "--field", str(f), "--lambda", repr(lam)) == 0
    series = json.loads((tmp_path / "out" / "frequency.json").read_text())["series"]
    assert series["r"][0] <= 0.06
    assert series["N"][0] == pytest.approx(1.0, abs=0.05)


def test_sweep_command(tmp_path, capsys):
    cfg = {"domain": {"radius": 1.0}, "patch": {"kind": "disk", "radius": 1.0},
           "sweep": {"epsilon_list": [0.4, 0.3, 0.2]}}
    assert run(tmp_path, cfg, "sweep") == 0
    out = tmp_path / "out"
    for name in ("sweep.json", "sweep.csv", "sweep_loglog.dat", "sweep_report.json"):
        assert (out / name).exists()
    assert "slope" in capsys.readouterr().out


def test_report(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path / "r")]) == 3
    run(tmp_path, base(), "eig", out="r")
    capsys.readouterr()
    assert main(["report", "--out", str(tmp_path / "r")]) == 0
    assert "eigenvalues" in capsys.readouterr().out
