import csv
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bloch_beam.cli import main
from bloch_beam.config import parse_config
from bloch_beam.errors import InvalidInput, OutputError
from bloch_beam.io import Emitter, jsonable

LANDAU = """
mu = 1.0
[solver]
cutoff = 2.0
[orbit]
E0 = 0.09
"""


def _write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_defaults_filled(tmp_path):
    cfg = parse_config(_write(tmp_path, LANDAU))
    assert cfg.solver.cutoff == 2.0 and cfg.solver.band_index == 1
    assert cfg.beam.tol_frame == 1e-7 and cfg.phases.n_range == range(0, 6)
    assert cfg.k3_values() == [0.0]


def test_json_config(tmp_path):
    p = _write(tmp_path, json.dumps({"orbit": {"E0": 0.09}, "solver": {"cutoff": 2}}), "run.json")
    assert parse_config(p).solver.cutoff == 2.0


def test_cosine_shorthand_adds_partner():
    cfg = parse_config({"orbit": {"E0": 0.1}, "lattice": {"cosines": [{"m": [1, 0, 0], "re": 0.05, "im": 0.02}]}})
    c = cfg.lattice_spec().potential_coeffs
    assert c[(1, 0, 0)] == 0.05 + 0.02j and c[(-1, 0, 0)] == 0.05 - 0.02j


@pytest.mark.parametrize("doc, fragment", [
    ({}, "orbit"),
    ({"orbit": {"E0": 0.1, "bogus": 1}}, "orbit.bogus"),
    ({"orbit": {"E0": 0.1}, "solver": {"cutoff": -1}}, "solver.cutoff"),
    ({"orbit": {"E0": 0.1}, "residual": {"eps_list": [1e-2, 5e-3, 2e-3]}}, "residual.eps_list"),
    ({"orbit": {"E0": 0.1}, "residual": {"eps_list": [1e-2, 1e-2, 5e-3, 1e-3]}}, "residual.eps_list"),
    ({"orbit": {"E0": 0.1, "k3_grid": [0.1, 0.0]}}, "orbit.k3_grid"),
    ({"orbit": {"E0": 0.1}, "phases": {"n_min": 3, "n_max": 1}}, "phases"),
    ({"orbit": {"E0": 0.1}, "lattice": {"potential": [{"m": [1, 0, 0], "re": 0.1}]}}, "Hermitian"),
    ({"orbit": {"E0": 0.1}, "output": {"formats": ["xml"]}}, "output.formats"),
])
def test_config_errors(doc, fragment):
    with pytest.raises(InvalidInput, match=fragment.replace(".", r"\.")):
        parse_config(doc)


def test_bad_toml(tmp_path):
    with pytest.raises(InvalidInput):
        parse_config(_write(tmp_path, "orbit = [\n"))
    with pytest.raises(InvalidInput):
        parse_config(tmp_path / "missing.toml")


@settings(max_examples=40, deadline=None)
@given(rows=st.lists(st.tuples(st.floats(allow_nan=False, allow_infinity=False), st.integers(-10**6, 10**6)),
                     max_size=20))
def test_csv_roundtrip_and_determinism(tmp_path_factory, rows):
    d = tmp_path_factory.mktemp("csv")
    Emitter(d / "a", ["csv"]).table("t", ["x", "n"], rows)
    Emitter(d / "b", ["csv"]).table("t", ["x", "n"], rows)
    a = (d / "a" / "t.csv").read_bytes()
    assert a == (d / "b" / "t.csv").read_bytes()
    back = list(csv.reader(a.decode().splitlines()))
    assert back[0] == ["x", "n"]
    assert [(float(x), int(n)) for x, n in back[1:]] == [(float(x), n) for x, n in rows]


def test_jsonable_handles_complex_and_nan():
    out = jsonable({"z": 1 + 2j, "bad": float("nan"), "arr": np.arange(2), "k": np.int64(3)})
    assert out == {"z": {"re": 1.0, "im": 2.0}, "bad": None, "arr": [0, 1], "k": 3}


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OutputError):
        Emitter(blocker / "sub")


def test_cli_levels_landau(tmp_path, capsys):
    cfg = _write(tmp_path, LANDAU)
    out = tmp_path / "out"
    assert main(["levels", "--config", str(cfg), "--out", str(out), "--json"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["result"]["slices"][0]["N_M"] == 1
    assert "theta_rw" in summary["conventions"]
    with open(out / "levels.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["k3", "n", "eps_n", "gamma", "theta_b", "theta_rw", "N_M"]
    eps = [float(r[2]) for r in rows[1:]]
    assert np.allclose(eps, [0.09 / (2 * n + 1) for n in range(6)], rtol=1e-6)
    assert (out / "effective_config.json").exists()
    # byte-identical rerun
    first = (out / "levels.csv").read_bytes()
    assert main(["levels", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "levels.csv").read_bytes() == first


def test_cli_orbit_and_beam(tmp_path):
    cfg = _write(tmp_path, LANDAU)
    out = tmp_path / "out"
    assert main(["orbit", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["beam", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["phases", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["bands", "--config", str(cfg), "--out", str(out)]) == 0
    header = (out / "frame.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "s" and header[-2:] == ["absdetY", "argdetY"] and len(header) == 27
    assert (out / "orbit.csv").read_bytes().startswith(b"s,k1,k2,vy1,vy2\r\n")
    phases = json.loads((out / "phases.json").read_text())
    assert phases["N_M"] == 1 and phases["gamma"] == 0.5


@pytest.mark.parametrize("text, code", [
    ("[orbit]\nE0 = 0.09\nbogus = 1\n", 2),
    ("[solver]\ncutoff = 2.0\n[orbit]\nE0 = 0.3\n", 2),  # orbit reaches the zone-boundary degeneracy
    ("[solver]\ncutoff = 2.0\n[orbit]\nE0 = -0.5\n", 2),  # below the band bottom
    ("[solver]\ncutoff = 2.0\n[orbit]\nE0 = 0.09\n[phases]\ntol_amp = 1e-30\n", 3),
])
def test_cli_exit_codes(tmp_path, capsys, text, code):
    cfg = _write(tmp_path, text)
    assert main(["levels", "--config", str(cfg), "--out", str(tmp_path / "o"), "--json"]) == code
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_code"] == code and err["error"]


def test_cli_sweep_requires_grid(tmp_path):
    assert main(["sweep", "--config", str(_write(tmp_path, LANDAU)), "--out", str(tmp_path / "o")]) == 2


@pytest.mark.parametrize("name", ["landau.toml", "weak.toml", "sweep.toml"])
def test_shipped_configs_validate(name):
    cfg = parse_config(Path(__file__).resolve().parents[1] / "configs" / name)
    cfg.lattice_spec()
