import csv
import hashlib
import json

import pytest

from symphom.cli import build_parser, run


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


KINETIC = """
[hamiltonian]
catalog = kinetic

[params]
k_schedule = 2, 4, 8

[alpha]
a_grid = -1:1:3

[homogenize]
p_grid = 0, 1.5
"""


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_alpha_scenario(tmp_path):
    cfg = write(tmp_path, KINETIC)
    out = tmp_path / "out"
    assert run(["alpha", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_csv(out / "alpha_profile.csv")
    assert rows[0] == ["a", "alpha", "fekete_bound", "uncertainty", "model"]
    assert [float(r[1]) for r in rows[1:]] == pytest.approx([0.5, 0.0, 0.5], abs=1e-3)
    detail = read_csv(out / "alpha_rows.csv")
    assert detail[0] == ["a", "k", "M", "value", "value_per_k", "gradient_norm", "starts_used"]
    assert len(detail) == 1 + 9
    assert (out / "alpha_profile.svg").read_text().startswith("<svg")
    man = json.loads((out / "manifest.json").read_text())
    assert man["scenario"] == "alpha" and man["exit_status"] == 0 and man["seed"] == 0
    assert sorted(man["outputs"]) == ["alpha_profile.csv", "alpha_profile.svg", "alpha_rows.csv"]
    assert "total" in man["wall_time_ms"]
    assert man["config"]["hamiltonian"]["catalog"] == "kinetic"


def test_alpha_is_deterministic(tmp_path):
    cfg = write(tmp_path, KINETIC)
    for d in ("a", "b"):
        assert run(["alpha", "--config", str(cfg), "--out", str(tmp_path / d), "--seed", "7"]) == 0
    for name in ("alpha_rows.csv", "alpha_profile.csv", "alpha_profile.svg"):
        assert digest(tmp_path / "a" / name) == digest(tmp_path / "b" / name)


def test_homogenize_scenario(tmp_path):
    cfg = write(tmp_path, KINETIC)
    assert run(["homogenize", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "hbar.csv")
    assert rows[0] == ["p", "hbar", "uncertainty"]
    assert float(rows[2][1]) == pytest.approx(1.125, abs=2e-3)


def test_gfqi_spectra_scenario(tmp_path):
    cfg = write(tmp_path, """
[hamiltonian]
expr = 0.5*p1^2
tonelli = true

[gfqi]
k = 1
a = 0.5
export_grid = yes
""")
    assert run(["gfqi-spectra", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "spectra.csv")
    assert rows[0] == ["k", "a", "grid", "ell_minus", "ell_plus", "refinement_error", "neg_index"]
    final = [r for r in rows if r[2] == "final"][0]
    # negated-flipped S_1: ell_+ = -min S_1 = a^2 / 2
    assert float(final[4]) == pytest.approx(0.125, abs=5e-3)
    assert (tmp_path / "diagram_k1.csv").exists() and (tmp_path / "gf_k1.grid").exists()


def test_cross_check_scenario(tmp_path):
    cfg = write(tmp_path, """
[hamiltonian]
catalog = kinetic

[cross-check]
k = 1
a = 0.5
""")
    assert run(["cross-check", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "cross_check.csv")
    assert len(rows) == 3 and all(r[-1] == "1" for r in rows[1:])


def test_grid_hamiltonian(tmp_path):
    import numpy as np
    from symphom.geometry import Axis
    from symphom.gridio import write_grid
    p = np.linspace(-4, 4, 161)
    write_grid(tmp_path / "kin.grid", [Axis("q1", 0, 1, 8, periodic=True), Axis("p1", -4, 4, 161)],
               np.broadcast_to(0.5 * p * p, (8, 161)))
    cfg = write(tmp_path, """
[hamiltonian]
grid = kin.grid
tonelli = true

[params]
k_schedule = 2, 4, 8

[alpha]
a_grid = 1
""")
    assert run(["alpha", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert float(read_csv(tmp_path / "o" / "alpha_profile.csv")[1][1]) == pytest.approx(0.5, abs=5e-3)


@pytest.mark.parametrize("text,needle", [
    ("[params]\nk_schedule = 2\n", "[hamiltonian]"),
    ("[hamiltonian]\nexpr = 0.5*p1^2\ncatalog = kinetic\n", "exactly one of"),
    ("[hamiltonian]\ncatalog = banana\n", "catalog"),
    ("[hamiltonian]\nexpr = 0.5*p1^^2\ntonelli = true\n[alpha]\na_grid = 0\n", "expr"),
    ("[hamiltonian]\ncatalog = kinetic\n[params]\nsteps_per_period = 4\n[alpha]\na_grid = 0\n",
     "steps_per_period"),
    ("[hamiltonian]\ncatalog = kinetic\n[alpha]\na_grid = zero:1:2\n", "a_grid"),
    ("[hamiltonian]\ncatalog = kinetic\n[params]\ngtol = -1\n[alpha]\na_grid = 0\n", "gtol"),
    ("[hamiltonian]\nexpr = 0.5*p1^2\n[alpha]\na_grid = 0\n", "tonelli"),
    ("[hamiltonian]\ncatalog = kinetic\n", "a_grid"),
    ("[hamiltonian\ncatalog = kinetic\n", "run.ini"),
])
def test_malformed_config_names_the_field(tmp_path, capsys, text, needle):
    cfg = write(tmp_path, text)
    assert run(["alpha", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "config error" in err and needle in err


def test_error_reports_line_number(tmp_path, capsys):
    cfg = write(tmp_path, "[hamiltonian]\ncatalog = kinetic\n\n[params]\nsteps_per_period = 3\n[alpha]\na_grid = 0\n")
    assert run(["alpha", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert f"{cfg}:5: [params] steps_per_period" in capsys.readouterr().err


def test_missing_config(tmp_path, capsys):
    assert run(["alpha", "--out", str(tmp_path)]) == 1
    assert run(["alpha", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path)]) == 1
    assert "does not exist" in capsys.readouterr().err


def test_bad_flags(tmp_path):
    cfg = write(tmp_path, KINETIC)
    assert run(["alpha", "--config", str(cfg), "--out", str(tmp_path), "--jobs", "0"]) == 1
    assert run(["alpha", "--config", str(cfg), "--out", str(tmp_path), "--tolerance-scale", "0"]) == 1


def test_check_battery_config_errors(tmp_path, capsys):
    cfg = write(tmp_path, "[check]\nlipschitz_pair = 1.5\n")
    assert run(["check", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "lipschitz_pair" in capsys.readouterr().err


def test_parser_lists_scenarios():
    ap = build_parser()
    for name in ("alpha", "homogenize", "gfqi-spectra", "check", "cross-check"):
        assert ap.parse_args([name]).scenario == name
    with pytest.raises(SystemExit):
        ap.parse_args(["nonsense"])
