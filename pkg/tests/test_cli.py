import json

import numpy as np
import pytest

from mixlab.cli import main
from mixlab.errors import ScenarioError
from mixlab.grid import GridDomain
from mixlab.reports import read_solution_binary
from mixlab.scenarios import (
    bundled_path,
    dump_toml,
    list_bundled,
    load_scenario,
    make_expression,
)

ALL_BUNDLED = ["cross", "cusp3", "cusp_exp", "elliptic_family", "half_plane",
               "heat", "heat_bump", "osc_interface", "sgn_x", "weighted"]


def test_bundled_inventory():
    assert list_bundled() == ALL_BUNDLED


@pytest.mark.parametrize("name", ALL_BUNDLED)
def test_bundled_roundtrip(name):
    sc = load_scenario(bundled_path(name))
    text = dump_toml(sc.raw)
    sc2 = load_scenario(text)
    assert sc2.raw == sc.raw
    assert dump_toml(sc2.raw) == text


def test_schema_rejects_unknown_keys():
    sc = load_scenario(bundled_path("heat"))
    raw = dict(sc.raw)
    raw["bogus"] = 1
    with pytest.raises(ScenarioError):
        load_scenario(dump_toml(raw))
    raw = dict(sc.raw)
    raw["grid"] = dict(raw["grid"], zoom=2)
    with pytest.raises(ScenarioError):
        load_scenario(dump_toml(raw))


def test_schema_version_gate():
    sc = load_scenario(bundled_path("heat"))
    raw = dict(sc.raw)
    raw["schema_version"] = 99
    with pytest.raises(ScenarioError):
        load_scenario(dump_toml(raw))


def test_expression_catalog_basics():
    pts = np.array([[-0.5], [0.25]])
    f = make_expression({"kind": "const", "value": 3.0})
    assert np.allclose(f(pts), 3.0)
    f = make_expression({"kind": "power", "beta": 0.5, "center": [0.0]})
    assert np.allclose(f(pts), np.sqrt([0.5, 0.25]))
    f = make_expression({"kind": "piecewise", "boxes": [[[-1.0], [0.0]]],
                         "values": [5.0], "default": 1.0})
    assert np.allclose(f(pts), [5.0, 1.0])
    f = make_expression({"kind": "step_t", "before": 1.0, "after": 2.0,
                         "t_switch": 0.5})
    assert np.allclose(f(pts, 0.2), 1.0)
    assert np.allclose(f(pts, 0.7), 2.0)
    with pytest.raises(ScenarioError):
        make_expression({"kind": "nope"})
    with pytest.raises(ScenarioError):
        make_expression({"kind": "const", "value": 1.0, "extra": 2})


def test_csv_grid_expression(tmp_path):
    grid_file = tmp_path / "w.csv"
    grid_file.write_text("4\n1.0\n2.0\n3.0\n4.0\n")
    f = make_expression({"kind": "csv", "path": "w.csv"}, base_dir=tmp_path)
    g = GridDomain(dim=1, origin=(0.0,), extent=(1.0,), shape=(4,))
    assert np.allclose(f(g.centers()), [1, 2, 3, 4])
    bad = tmp_path / "bad.csv"
    bad.write_text("4\n1.0\n2.0\n")
    with pytest.raises(ScenarioError):
        make_expression({"kind": "csv", "path": "bad.csv"}, base_dir=tmp_path)


def test_cli_audit_exit_codes(tmp_path, capsys):
    assert main(["weights", "audit", "heat"]) == 0
    capsys.readouterr()
    assert main(["weights", "audit", "cusp_exp"]) == 2
    capsys.readouterr()
    assert main(["weights", "audit", "cusp3"]) == 0
    capsys.readouterr()
    assert main(["weights", "audit", str(tmp_path / "missing.toml")]) == 3


def test_cli_audit_deterministic_bytes(tmp_path, capsys):
    for d in ("a", "b"):
        assert main(["weights", "audit", "heat", "--out", str(tmp_path / d)]) == 0
        capsys.readouterr()
    fa = (tmp_path / "a" / "heat_audit.json").read_bytes()
    fb = (tmp_path / "b" / "heat_audit.json").read_bytes()
    assert fa == fb


def test_cli_solve_outputs(tmp_path, capsys):
    assert main(["solve", "heat", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    payload = json.loads(out)
    assert payload["residual_norm"] <= 1e-10
    assert "max_error_vs_exact" in payload
    csv_file = tmp_path / "heat_solution.csv"
    header = csv_file.read_text().splitlines()[0]
    assert header == "t,x,u,u_exact,error"
    shape, n_levels, vals = read_solution_binary(tmp_path / "heat_solution.bin")
    assert shape == (64,)
    assert n_levels == 129
    assert np.all(np.isfinite(vals))


def test_cli_solve_jobs_parallel(tmp_path, capsys):
    assert main(["solve", "heat", "sgn_x", "--out", str(tmp_path),
                 "--jobs", "2"]) == 0
    capsys.readouterr()
    assert (tmp_path / "heat_solve.json").exists()
    assert (tmp_path / "sgn_x_solve.json").exists()


def test_cli_solve_rejects_audit_only(capsys):
    assert main(["solve", "cusp3"]) == 3


def test_cli_verify_harnack(tmp_path, capsys):
    assert main(["verify", "harnack", "heat", "--case", "i", "--theta", "1.0",
                 "--out", str(tmp_path)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["ratios"][0]["ratio"] > 0
    assert (tmp_path / "heat_harnack.json").exists()


def test_cli_verify_holder(capsys):
    assert main(["verify", "holder", "sgn_x", "--at", "0.0", "--t", "0.125"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert "alpha_hat" in payload


def test_cli_verify_degiorgi_and_maxprin(capsys):
    assert main(["verify", "degiorgi", "heat"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["verdict"] == "DG"
    assert main(["verify", "maxprin", "heat"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["verdict"] in ("not-applicable", "constant")


def test_cli_report_consolidation(tmp_path, capsys):
    run = tmp_path / "run"
    run.mkdir()
    assert main(["report", str(run)]) == 3
    capsys.readouterr()
    (run / "one.json").write_text('{"a": 1, "b": {"c": 2.5}}\n')
    (run / "two.json").write_text('{"x": [1, 2]}\n')
    assert main(["report", str(run), "--out", str(run)]) == 0
    capsys.readouterr()
    merged = json.loads((run / "consolidated.json").read_text())
    assert merged["one"]["b"]["c"] == 2.5
    rows = (run / "consolidated.csv").read_text().splitlines()
    assert rows[0] == "source,key,value"
    assert any(r.startswith("two,x.0,1") for r in rows)


def test_cli_verify_refine_flag(capsys):
    assert main(["verify", "degiorgi", "sgn_x", "--refine"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert "refinement_ratio" in payload
    assert payload["refinement_ratio"] <= 1.5


def test_cli_verify_harnack_case_iii_and_iv(capsys):
    assert main(["verify", "harnack", "half_plane"]) == 0   # queries: case iii
    payload = json.loads(capsys.readouterr().out)
    assert payload["case"] == "iii"
    assert payload["ratios"][0]["ratio"] >= 1.0
    assert main(["verify", "harnack", "elliptic_family"]) == 0  # case iv
    payload = json.loads(capsys.readouterr().out)
    assert payload["ratios"][0]["ratio"] >= 1.0
