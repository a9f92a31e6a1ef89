import json
import os

import pytest

from pwa_sens.cli import RunConfig, main, run
from pwa_sens.errors import InputError
from pwa_sens.mmps import single_segment, to_json
from pwa_sens.polytope import Polytope


def read(path):
    with open(path) as fh:
        return fh.read()


def err_json(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture
def one_piece(tmp_path):
    f = single_segment([([2.0], 1.0)], Polytope.interval(0, 4))
    path = tmp_path / "one.json"
    path.write_text(json.dumps(to_json(f)))
    return str(path)


def test_modulus_of_one_piece_surrogate_is_zero(tmp_path, one_piece):
    out = tmp_path / "out"
    assert main(["modulus", "--surrogate", one_piece, "--gamma-steps", "50",
                 "--out", str(out)]) == 0
    lines = read(out / "curve_segment0.csv").splitlines()
    assert lines[0] == "gamma,h1"
    assert len(lines) == 51
    assert all(float(l.split(",")[1]) == 0.0 for l in lines[1:])
    rep = json.loads(read(out / "report.json"))
    assert rep["schema"] == "pwa-sens-report-v1"


def test_verify_against_own_surrogate(tmp_path, one_piece):
    out = tmp_path / "out"
    assert main(["verify", "--function", one_piece, "--surrogate", one_piece,
                 "--grid-resolution", "401", "--out", str(out)]) == 0
    rep = json.loads(read(out / "report.json"))
    seg = rep["segments"][0]
    assert seg["oracle_distance"] == 0.0
    assert seg["delta"] == 0.0
    assert rep["verified"] is True


def test_radius_with_reference_surrogate(tmp_path):
    out = tmp_path / "out"
    assert main(["radius", "--surrogate", "ref:f3-1", "--delta", "19.9",
                 "--out", str(out)]) == 0
    seg = json.loads(read(out / "report.json"))["segments"][0]
    assert seg["chi_curve"] == pytest.approx(70.0, abs=2.0)
    assert seg["c1"] == pytest.approx(3.45)


def test_fit_writes_surrogate(tmp_path):
    out = tmp_path / "out"
    assert main(["fit", "--function", "eggholder1d", "--region=-330,-180", "--pieces", "3",
                 "--fit-resolution", "301", "--out", str(out)]) == 0
    rep = json.loads(read(out / "report.json"))
    assert rep["validation"]["valid"]
    doc = json.loads(read(out / "surrogate_fit.json"))
    assert doc["format"] == "mmps-v1"


def test_fit_from_csv_table(tmp_path):
    table = tmp_path / "t.csv"
    table.write_text("x,y\n" + "".join(f"{x},{abs(x - 2)}\n" for x in range(0, 6)))
    out = tmp_path / "out"
    assert main(["fit", "--function", str(table), "--pieces", "2", "--fit-resolution", "51",
                 "--out", str(out)]) == 0
    rep = json.loads(read(out / "report.json"))
    assert rep["delta"]["delta"] == pytest.approx(0.0, abs=1e-9)


def test_fit_with_target_radius(tmp_path):
    out = tmp_path / "out"
    assert main(["fit", "--function", "eggholder1d", "--region=-330,-180",
                 "--target-chi", "15", "--diameter-budget", "10", "--out", str(out)]) == 0
    ref = json.loads(read(out / "report.json"))["refinement"]
    assert ref["max_subregion_diam"] <= 10 + 1e-9
    assert ref["chi_theorem"] <= 15


def test_case_study_bundle_contents(tmp_path):
    out = tmp_path / "out"
    assert main(["case-study", "--function", "eggholder1d", "--out", str(out)]) == 0
    rep = json.loads(read(out / "report.json"))
    refs = rep["reference_surrogates"]
    assert refs["f3-1"]["at_printed_delta"][0]["chi_curve"] == pytest.approx(70.0, abs=2.0)
    assert "f3-2" in refs
    assert rep["refinement"]["verified"]
    assert rep["five_region_fit"]["validation"]["valid"]
    names = set(os.listdir(out))
    assert {"report.json", "manifest.json", "curve_f3-1.csv", "curve_f3-2.csv"} <= names


def test_unknown_function_is_usage_error(tmp_path, capsys):
    code = main(["fit", "--function", "nosuch", "--out", str(tmp_path / "o")])
    assert code == 2
    err = err_json(capsys)
    assert err["exit_code"] == 2 and err["error"] == "InputError"


def test_bad_arguments_are_usage_errors(capsys):
    assert main(["frobnicate"]) == 2
    assert err_json(capsys)["exit_code"] == 2
    assert main(["modulus", "--gamma-steps", "many"]) == 2


def test_missing_surrogate_option(tmp_path, capsys):
    assert main(["modulus", "--out", str(tmp_path / "o")]) == 2


def test_malformed_surrogate_is_format_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["modulus", "--surrogate", str(bad), "--out", str(tmp_path / "o")]) == 3
    assert err_json(capsys)["error"] == "FormatError"
    bad.write_text(json.dumps({"format": "mmps-v0"}))
    assert main(["modulus", "--surrogate", str(bad), "--out", str(tmp_path / "o")]) == 3


def test_evaluation_failure_exit_code(tmp_path, capsys):
    table = tmp_path / "t.csv"
    table.write_text("x,y\n0,1\n1,nan\n2,0\n")
    assert main(["fit", "--function", str(table), "--pieces", "1", "--fit-resolution", "5",
                 "--out", str(tmp_path / "o")]) == 4
    err = err_json(capsys)
    assert err["exit_code"] == 4


def test_surrogate_outside_function_domain(tmp_path, capsys):
    f = single_segment([([1.0], 0.0)], Polytope.interval(600, 700))
    path = tmp_path / "far.json"
    path.write_text(json.dumps(to_json(f)))
    assert main(["verify", "--function", "eggholder1d", "--surrogate", str(path),
                 "--out", str(tmp_path / "o")]) == 4


def test_config_validation():
    with pytest.raises(InputError):
        RunConfig(command="plot")
    with pytest.raises(InputError):
        RunConfig(command="modulus", gamma_steps=0)
    with pytest.raises(InputError):
        RunConfig(command="modulus", surrogate="/no/such/file.json")


def test_config_round_trip():
    cfg = RunConfig(command="radius", surrogate="ref:f3-2", delta=2.6, seed=4)
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


def test_replay_reproduces_bundle(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["radius", "--surrogate", "ref:f3-2", "--delta", "2.6", "--gamma-steps", "300",
                 "--out", str(a)]) == 0
    assert main(["replay", str(a / "manifest.json"), "--out", str(b)]) == 0
    for name in os.listdir(a):
        if name == "manifest.json":
            continue
        assert read(a / name) == read(b / name), name


def test_same_config_same_bytes(tmp_path):
    outs = []
    for tag in ("x", "y"):
        cfg = RunConfig(command="modulus", surrogate="ref:f3-1", gamma_steps=200,
                        output_dir=str(tmp_path / tag))
        run(cfg)
        outs.append({n: read(tmp_path / tag / n) for n in os.listdir(tmp_path / tag)
                     if n != "manifest.json"})
    assert outs[0] == outs[1]
