import csv
import json
import math

import numpy as np
import pytest

from bdsagnac import cli
from bdsagnac import counting as cnt
from bdsagnac.materials import dumps_database

DESIGN = ["design", "--material", "calcite", "--length-mm", "40", "--cut-deg", "45",
          "--pump-nm", "940", "--signal-nm", "764", "--idler-nm", "1221", "--reproducible"]


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_design_report(capsys, tmp_path):
    table = tmp_path / "t.txt"
    code, out, _ = run(DESIGN + ["--table", table], capsys)
    assert code == 0
    doc = json.loads(out)
    res = doc["result"]
    assert (round(res["spatial_walkoff_signal_mm"], 2), round(res["spatial_walkoff_idler_mm"], 2)) == (-0.07, 0.09)
    assert (round(res["temporal_walkoff_signal_ps"], 2), round(res["temporal_walkoff_idler_ps"], 2)) == (-0.20, 0.06)
    assert doc["tool"]["name"] == "bdsagnac" and doc["database"]["schema_version"] == 1
    assert doc["parameters"]["length_mm"] == 40.0
    assert "generated_utc" not in doc
    assert table.read_text().splitlines()[1].startswith("calcite")


def test_reports_are_byte_identical(capsys):
    first = run(DESIGN, capsys)[1]
    assert run(DESIGN, capsys)[1] == first
    stamped = json.loads(run(DESIGN[:-1], capsys)[1])
    assert "generated_utc" in stamped


@pytest.mark.parametrize(
    "argv, code, kind",
    [
        (["design", "--pump-nm", "940"], 2, "usage"),
        (["simulate", "counts", "--output-csv", "x.csv"], 2, "usage"),
        (["design", "--material", "unobtainium", "--pump-nm", "940", "--signal-nm", "764", "--idler-nm", "1221"], 3, "database"),
        (["fit-counts", "/nonexistent/scan.csv"], 3, "data"),
        (["design", "--material", "calcite", "--pump-nm", "940", "--signal-nm", "764", "--idler-nm", "1000"], 4, "domain"),
        (["design", "--material", "YVO4", "--pump-nm", "400", "--signal-nm", "300", "--idler-nm", "600"], 4, "range"),
    ],
)
def test_exit_codes_and_single_line_errors(capsys, argv, code, kind):
    got, out, err = run(argv, capsys)
    assert got == code
    assert out == ""
    assert err.count("\n") == 1 and err.startswith(f"bdsagnac: error[{kind}]: ")


def test_non_convergence_exit_code(capsys, tmp_path):
    scan = tmp_path / "scan.csv"
    assert run(["simulate", "counts", "--seed", 4, "--output-csv", scan, "-o", tmp_path / "r.json"], capsys)[0] == 0
    code, _, err = run(["fit-counts", scan, "--max-iterations", 1], capsys)
    assert code == 4 and err.startswith("bdsagnac: error[convergence]")


@pytest.mark.parametrize("command", ["materials", "design", "fit-counts", "fringe", "chsh", "phase-series", "allan", "simulate"])
def test_help_lists_units(capsys, command):
    with pytest.raises(SystemExit) as info:
        cli.main([command, "--help"])
    assert info.value.code == 0
    text = capsys.readouterr().out
    parser_actions = cli.build_parser()._subparsers._group_actions[0].choices[command]._actions
    for action in parser_actions:
        for flag in action.option_strings:
            assert flag in text
    unit_suffixes = ("-mm", "-deg", "-nm", "-ps", "-k", "-s", "-cps", "-mw", "-mhz", "-ns", "-mw2")
    for action in parser_actions:
        long = [f for f in action.option_strings if f.startswith("--")]
        if long and any(u in long[0] for u in ("length", "wavelength", "window", "power", "duration")):
            assert long[0].endswith(unit_suffixes)


def test_materials_command(capsys):
    code, out, _ = run(["materials", "--reproducible"], capsys)
    assert code == 0 and "YVO4" in json.loads(out)["result"]
    code, out, _ = run(["materials", "--material", "quartz", "--wavelength-nm", 589.3, "--reproducible"], capsys)
    row = json.loads(out)["result"]["rows"][0]
    assert row["n_o"] == pytest.approx(1.5443, abs=2e-3)


def test_env_database(capsys, tmp_path, monkeypatch, db):
    path = tmp_path / "db.toml"
    path.write_text(dumps_database(db))
    monkeypatch.setenv("BDSAGNAC_DB", str(path))
    code, out, _ = run(DESIGN, capsys)
    assert code == 0 and json.loads(out)["database"]["source"] == str(path)


def test_simulate_then_fit_round_trip(capsys, tmp_path):
    scan = tmp_path / "scan.csv"
    before = None
    assert run(["simulate", "counts", "--seed", 1, "--output-csv", scan, "-o", tmp_path / "s.json"], capsys)[0] == 0
    before = scan.read_bytes()
    plot = tmp_path / "model.csv"
    code, out, _ = run(["fit-counts", scan, "--reproducible", "--plot-data", plot], capsys)
    assert code == 0 and scan.read_bytes() == before
    res = json.loads(out)["result"]
    got = res["parameters"]
    truth = dict(zip(cnt.FIT_NAMES, cnt.REFERENCE_FIT.fitted()))
    for name in ("n_pair", "n_raman_i", "eta_s", "eta_i"):
        assert got[name] == pytest.approx(truth[name], rel=0.05)
    assert res["per_pulse_brightness_per_mw2"] == pytest.approx(got["n_pair"] / 76e6)
    assert plot.read_text().startswith("power_mw,model_n_s_cps")


@pytest.mark.xfail(strict=True, reason="signal Raman coefficient is poorly constrained by the scan (about 10% off at seed 1)")
def test_simulate_then_fit_signal_raman(capsys, tmp_path):
    scan = tmp_path / "scan.csv"
    run(["simulate", "counts", "--seed", 1, "--output-csv", scan, "-o", tmp_path / "s.json"], capsys)
    got = json.loads(run(["fit-counts", scan, "--reproducible"], capsys)[1])["result"]["parameters"]
    assert got["n_raman_s"] == pytest.approx(18.61, rel=0.05)


def test_fringe_and_chsh_commands(capsys, tmp_path):
    data = tmp_path / "fr.csv"
    run(["simulate", "fringe", "--seed", 2, "--output-csv", data, "--duration-s", 5, "-o", tmp_path / "s.json"], capsys)
    code, out, _ = run(["fringe", data, "--reproducible", "--plot-data", tmp_path / "p.csv"], capsys)
    assert code == 0
    res = json.loads(out)["result"]
    assert res["visibility_avg"] == pytest.approx(0.955, abs=0.006)
    code, out, _ = run(["chsh", data, "--reproducible"], capsys)
    res = json.loads(out)["result"]
    assert res["S"] == pytest.approx(res["S_expected_from_visibility"], abs=1e-3)
    code, _, err = run(["chsh", data, "--raw-counts"], capsys)
    assert code == 3 and "error[incomplete]" in err


def test_phase_series_and_allan(capsys, tmp_path):
    data, phase, curve = tmp_path / "ps.csv", tmp_path / "phase.csv", tmp_path / "curve.csv"
    run(["simulate", "phase-series", "--seed", 3, "--scans", 40, "--output-csv", data, "-o", tmp_path / "s.json"], capsys)
    code, out, _ = run(["phase-series", data, "--output-csv", phase, "--reproducible"], capsys)
    assert code == 0 and json.loads(out)["result"]["converged"] == 40
    code, out, err = run(["allan", phase, "--output-csv", curve, "--reproducible"], capsys)
    assert code == 0 and err.startswith("slope ")
    assert curve.read_text().startswith("t_seconds,sigma_deg\n")


def test_allan_constant_phase(capsys, tmp_path):
    phase = tmp_path / "const.csv"
    rows = ["timestamp_s,gamma,phi_deg,sigma_gamma,sigma_phi_deg,converged"]
    rows += [f"{600 * k},0.7071,30.0,0.001,0.1,1" for k in range(20)]
    phase.write_text("\n".join(rows) + "\n")
    code, out, _ = run(["allan", phase, "--output-csv", tmp_path / "c.csv", "--reproducible"], capsys)
    assert code == 0
    assert all(s == 0.0 for _, s in json.loads(out)["result"]["curve"])


def test_emit_plot_data(tmp_path):
    empty = tmp_path / "e.csv"
    cli.emit_plot_data({"x": []}, empty)
    assert empty.read_text() == "x\n"
    one = tmp_path / "o.csv"
    cli.emit_plot_data({"x": [1.0, 2.0, 3.0]}, one)
    assert len(one.read_text().splitlines()) == 4
    theta = np.linspace(0, 180, 181)
    values = 0.25 * (1 + np.sin(np.radians(2 * theta)) * math.cos(0.1))
    path = tmp_path / "f.csv"
    cli.emit_plot_data({"theta_deg": theta, "n_c": values}, path)
    with open(path) as fh:
        back = np.array([[float(x) for x in row] for row in list(csv.reader(fh))[1:]])
    assert np.array_equal(back[:, 1], values) and np.array_equal(back[:, 0], theta)


def test_emit_plot_data_errors(tmp_path):
    with pytest.raises(cli.UsageError):
        cli.emit_plot_data({"a": [1.0], "b": [1.0, 2.0]}, tmp_path / "x.csv")
    from bdsagnac.errors import DataFormatError

    with pytest.raises(DataFormatError) as info:
        cli.emit_plot_data({"a": [1.0]}, tmp_path / "missing" / "x.csv")
    assert info.value.exit_code == 3
