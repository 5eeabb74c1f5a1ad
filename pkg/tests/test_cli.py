import json
import math

import numpy as np
import pytest

from qrpnsim import FrequencyGrid, output
from qrpnsim import budget as nb
from qrpnsim.cli import run
from qrpnsim.model import paper_config_path


def test_budget_columns_and_hierarchy(tmp_path, paper):
    out = tmp_path / "b.csv"
    assert run(["budget", "--fmin", "100", "--fmax", "1e6", "--ppd", "100", "--out", str(out)]) == 0
    cols = output.read_budget_csv(out)
    for name in ("f_hz", "asd_total", "asd_thermal", "asd_qrpn", "asd_shot", "asd_dark", "asd_sql"):
        assert name in cols
    f = cols["f_hz"]
    band = (f >= 10e3) & (f <= 50e3)
    assert np.all(cols["asd_qrpn"][band] >= cols["asd_thermal"][band])
    np.testing.assert_allclose(np.diff(np.log10(f)), 0.01, atol=1e-12)
    assert len(f) == 401


def test_budget_csv_round_trip(tmp_path, paper):
    out = tmp_path / "b.csv"
    assert run(["budget", "--ppd", "20", "--out", str(out)]) == 0
    cols = output.read_budget_csv(out)
    b = nb.measured_budget(paper, FrequencyGrid.log_spaced(100, 1e6, 20))
    np.testing.assert_allclose(cols["f_hz"], b.grid.points, rtol=1e-12)
    for name in output.BUDGET_COLUMNS:
        np.testing.assert_allclose(cols[f"asd_{name}"], b.asd(name), rtol=1e-12)


def test_budget_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(["budget", "--out", str(a)]) == 0
    assert run(["budget", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_budget_json(tmp_path):
    out = tmp_path / "b.json"
    assert run(["budget", "--ppd", "10", "--format", "json", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["units"] == "m/rtHz"
    assert len(doc["f_hz"]) == len(doc["asd_total"]) == 41


def test_sweep_zero_without_squeezing(tmp_path):
    out = tmp_path / "s.json"
    assert run(["sweep", "--ppd", "10", "--phases", "8", "--format", "json", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    m = np.array(doc["ratio_db"])
    assert m.shape == (8, 41) and np.all(m == 0)
    assert len(doc["phases_rad"]) == 8


def test_sweep_csv_with_r(tmp_path):
    out = tmp_path / "s.csv"
    assert run(["sweep", "--fmin", "1e4", "--fmax", "1e5", "--ppd", "10", "--phases", "4", "--r", "2.0", "--out", str(out)]) == 0
    rows = [ln.split(",") for ln in out.read_text().splitlines() if not ln.startswith("#")]
    assert len(rows) == 5 and len(rows[0]) == 12
    vals = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    assert vals[0].max() < 0 < vals[2].min()  # amplitude vs phase squeezing


def test_fit_r(capsys, tmp_path):
    out = tmp_path / "r.json"
    assert run(["fit-r", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    r = float(text.split()[0].split("=")[1])
    assert r == pytest.approx(2.04, abs=0.03)
    assert json.loads(out.read_text())["r"] == pytest.approx(r, abs=1e-6)


def test_fit_r_failure(capsys):
    assert run(["fit-r", "--target-db", "200"]) != 0
    assert "unattainable" in capsys.readouterr().err


def test_stability(capsys, tmp_path):
    out = tmp_path / "st.json"
    assert run(["stability", "--out", str(out)]) == 0
    assert capsys.readouterr().out.startswith("stable")
    assert json.loads(out.read_text())["stable"] is True


def test_stability_insufficient_grid(capsys):
    assert run(["stability", "--fmin", "1e3", "--fmax", "1e5"]) != 0
    assert "must cover" in capsys.readouterr().err


def test_invalid_config(tmp_path, capsys):
    d = json.loads(paper_config_path().read_text())
    d["cavity.finesse"] = 0
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps(d))
    out = tmp_path / "never.csv"
    assert run(["budget", "--config", str(cfg), "--out", str(out)]) != 0
    assert "finesse" in capsys.readouterr().err
    assert not out.exists()


def test_unwritable_output(tmp_path):
    out = tmp_path / "no" / "such" / "dir" / "b.csv"
    assert run(["budget", "--out", str(out)]) != 0
    assert not out.exists()


@pytest.mark.parametrize("argv", [["budget", "--ppd", "4"], ["sweep", "--phases", "2"], ["budget", "--fmin", "10", "--fmax", "5"]])
def test_request_invariants(argv):
    assert run(argv) != 0


def test_emit_plot_data(tmp_path, paper):
    grid = FrequencyGrid.log_spaced(100, 1e4, 10)
    b = nb.displacement_budget(paper, grid)
    p = tmp_path / "plot.csv"
    n = output.emit_plot_data(b, p, series=["total", "thermal", "qrpn"])
    assert n == 3 * len(grid)
    lines = p.read_text().splitlines()
    header = [ln for ln in lines if ln.startswith("#")]
    assert any("m/rtHz" in ln for ln in header)
    assert any(paper.config_hash() in ln for ln in header)
    assert len([ln for ln in lines if not ln.startswith("#")]) == n + 1
    p2 = tmp_path / "plot2.csv"
    output.emit_plot_data(b, p2, series=["total", "thermal", "qrpn"])
    assert p.read_bytes() == p2.read_bytes()


def test_emit_plot_data_sweep(tmp_path, paper):
    grid = FrequencyGrid.log_spaced(1e3, 1e5, 10)
    m = nb.phase_sweep_map(paper.with_squeezing(r=1.0), grid, [0.0, math.pi / 2])
    n = output.emit_plot_data(m, tmp_path / "m.csv", config_hash="abc")
    assert n == 2 * len(grid)
    assert "# config_sha256: abc" in (tmp_path / "m.csv").read_text()


def test_cli_plot_data(tmp_path):
    assert run(["budget", "--ppd", "10", "--out", str(tmp_path / "b.csv"), "--plot-data", str(tmp_path / "p.csv")]) == 0
    assert (tmp_path / "p.csv").exists()
