import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from builders import L1, grid_fed_template, showcase_scene
from ppwcd.cli import main, parse_currents, parse_freqs, parse_grid
from ppwcd.constants import ETA0, wavenumber
from ppwcd.polarizability import FieldGrid, write_field_grid
from ppwcd.scene import Element, ExplicitPolarizability, Feed, Plate, Scene, save_scene
from ppwcd.solver import read_state


@pytest.fixture
def showcase(tmp_path):
    p = tmp_path / "scene.json"
    save_scene(showcase_scene(), p)
    return p


def test_parsers():
    assert parse_currents("1+0j, 0.5-0.2j").tolist() == [1 + 0j, 0.5 - 0.2j]
    assert len(parse_freqs("8e9:12e9:81")) == 81
    assert parse_grid("91x360") == (91, 360)
    for bad in (lambda: parse_currents("1+x"), lambda: parse_freqs("1:2"), lambda: parse_grid("91by3")):
        with pytest.raises(ValueError):
            bad()


def test_solve_writes_state(showcase, tmp_path, capsys):
    out = tmp_path / "state.csv"
    assert main(["solve", "--scene", str(showcase), "--out", str(out)]) == 0
    assert len(read_state(out).p) == 10
    assert "cond" in capsys.readouterr().err


def test_impedance_sweep_matches_closed_form(tmp_path):
    h = 5.21e-3
    p = tmp_path / "feed.json"
    save_scene(Scene(10e9, Plate(-0.1, 0.1, -0.1, 0.1), h, [], [Feed(0.0, 0.0)]), p)
    out = tmp_path / "z.csv"
    assert main(["impedance", "--scene", str(p), "--freqs", "8e9:12e9:81", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 81
    for r in rows:
        f = float(r["f_hz"])
        assert float(r["Zre_ohm"]) == pytest.approx(0.25 * ETA0 * float(wavenumber(f)) * h, rel=1e-12)
    assert float(rows[40]["Zre_ohm"]) == pytest.approx(102.8, rel=1e-3)


def test_pattern_ff_vs_three_metres(showcase, tmp_path, capsys):
    ff, nf = tmp_path / "ff.csv", tmp_path / "nf.csv"
    assert main(["pattern", "--scene", str(showcase), "--distance", "ff", "--out", str(ff)]) == 0
    assert main(["pattern", "--scene", str(showcase), "--distance", "3.0", "--out", str(nf)]) == 0
    capsys.readouterr()
    assert main(["compare", str(ff), str(nf)]) == 0
    m = json.loads(capsys.readouterr().out)
    assert m["eps_pat"] <= 0.01


def test_outputs_are_byte_identical(showcase, tmp_path):
    for name in ("a", "b"):
        assert main(["pattern", "--scene", str(showcase), "--grid", "19x36", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_power_report(showcase, tmp_path):
    out = tmp_path / "p.json"
    assert main(["power", "--scene", str(showcase), "--currents", "1,1", "--out", str(out)]) == 0
    d = json.loads(out.read_text())
    assert set(d) == {"p_sup_w", "p_rad_w", "slack_w", "p_tot_w"}
    assert d["p_rad_w"] <= d["p_tot_w"] and d["p_sup_w"] > 0


def test_validate_passes_on_passive_scene(showcase, tmp_path):
    out = tmp_path / "v.json"
    assert main(["validate", "--scene", str(showcase), "--out", str(out)]) == 0
    assert all(r["passed"] for r in json.loads(out.read_text()))


def test_validate_names_active_element(tmp_path, capsys):
    els = [Element(0.0, 0.0, ExplicitPolarizability(1j * np.eye(2) * 1e-8, -1e-8 + 0j))]
    p = tmp_path / "gain.json"
    save_scene(Scene(10e9, Plate(-0.05, 0.05, -0.05, 0.05), 5e-3, els, [Feed(0.0, 0.03, 1.0)]), p)
    assert main(["validate", "--scene", str(p)]) == 1
    err = capsys.readouterr().err
    assert "FAIL Passivity[0]" in err and "validation failed" in err


def test_bad_input_exit_codes(tmp_path, showcase):
    assert main(["solve", "--scene", str(tmp_path / "missing.json")]) == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["solve", "--scene", str(tmp_path / "bad.json")]) == 2
    assert main(["impedance", "--scene", str(showcase), "--freqs", "8e9:12e9"]) == 2
    assert main(["solve", "--scene", str(showcase), "--currents", "1"]) == 2
    assert main(["pattern", "--scene", str(showcase), "--distance", "-1"]) == 2


def test_numerical_failure_exit_code(tmp_path, capsys):
    els = [Element(0.0, 0.0, ExplicitPolarizability([[1e-8, 1e-8], [1e-8, 1e-8]], 0.0))]
    p = tmp_path / "sing.json"
    save_scene(Scene(10e9, Plate(-0.05, 0.05, -0.05, 0.05), 5e-3, els, [Feed(0.0, 0.03)]), p)
    assert main(["solve", "--scene", str(p), "--currents", "1"]) == 3
    assert "SingularPolarizabilityError" in capsys.readouterr().err


def test_retrieve(tmp_path, capsys):
    xs = np.linspace(-2e-3, 2e-3, 21)
    X, Y = np.meshgrid(xs, xs)
    g = FieldGrid.structured(xs, xs, 0.3 * X / 2e-3 + 0j, 1.0 + 0 * X + 0j)
    write_field_grid(g, tmp_path / "g0.csv")
    write_field_grid(g, tmp_path / "g90.csv")
    assert main(["retrieve", "--grid0", str(tmp_path / "g0.csv"), "--grid90", str(tmp_path / "g90.csv"),
                 "--freq", "1e10", "--h0", "1", "--e0", "100"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert set(d) == {"A", "alpha_e", "asymmetry"}


def test_design_subcommand(tmp_path):
    save_scene(grid_fed_template(6, 4), tmp_path / "t.json")
    spec = {"directions_deg": [[10, 20], [20, 60]], "n_elements": 6, "l2_min_m": 2e-4, "l1_m": L1,
            "h_min_m": 2e-3, "h_max_m": 8e-3, "gammas": [0, 2], "n_init": 1, "n_final": 2, "restarts": 1,
            "max_iter": 10}
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    for name, w in (("a", "1"), ("b", "2")):
        assert main(["design", "--scene", str(tmp_path / "t.json"), "--spec", str(tmp_path / "spec.json"),
                     "--seed", "4", "--workers", w, "--out", str(tmp_path / name)]) == 0
    for f in ("scene.json", "gains.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_module_entry_point(showcase):
    r = subprocess.run([sys.executable, "-m", "ppwcd", "power", "--scene", str(showcase)], capture_output=True,
                       text=True)
    assert r.returncode == 0
    assert "p_tot_w" in json.loads(r.stdout)
