import numpy as np
import pytest

from gammastring.cli import build_parser, main
from gammastring.experiments import read_records

FAST = """
model = frobenius
slopes = 2 0 0; 0 2 0
eps = 2^-4, 2^-5, 2^-6, 2^-7
grid = 33 9 17
check_grid = 9 3 5
radial_points = 120
starts = 4
"""


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(FAST)
    return p


def test_density_csv(tmp_path):
    out = tmp_path / "env.csv"
    assert main(["density", "--model", "frobenius", "--points", "40", "--out", str(out)]) == 0
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    assert data.shape == (40, 4)
    assert np.all(data[:, 2] <= data[:, 1] + 1e-12)


def test_mollify_samples(tmp_path):
    curve = tmp_path / "c.txt"
    curve.write_text("# t x y z\n0 0 0 0\n0.5 0.5 0 0\n1 0 0 0\n")
    out = tmp_path / "s.txt"
    rc = main(["mollify", "--curve", str(curve), "--k", "2", "--eta", "0.02", "--loops", "0.1",
               "--samples", "21", "--out", str(out)])
    assert rc == 0
    data = np.loadtxt(out)
    assert data.shape == (21, 7)
    assert np.allclose(data[[0, -1], 1:4], 0, atol=1e-14)


def test_mollify_reversal_without_loops_fails(tmp_path, capsys):
    curve = tmp_path / "c.txt"
    curve.write_text("0 0 0 0\n0.5 0.5 0 0\n1 0 0 0\n")
    assert main(["mollify", "--curve", str(curve), "--k", "2", "--eta", "0.05"]) == 2
    assert "insert loops" in capsys.readouterr().err


def test_recover_dump(tmp_path, config, capsys):
    out = tmp_path / "field.txt"
    rc = main(["recover", "--alpha", "0", "--beta", "0.2", "--config", str(config),
               "--eps", "0.0625", "--out", str(out)])
    assert rc == 0
    data = np.loadtxt(out)
    assert data.shape == (33 * 9 * 17, 7)
    assert np.max(np.abs(data[:, 6] - 1)) <= 1e-8
    assert "phi - x3" in capsys.readouterr().err


def test_recover_path_regime(tmp_path):
    cfg = tmp_path / "path.cfg"
    cfg.write_text("slopes = 1 0 0; 0 1 0\neps = 2^-6\ngrid = 33 9 17\n")
    out = tmp_path / "field.txt"
    assert main(["recover", "--alpha", "1", "--beta", "0.2", "--config", str(cfg),
                 "--out", str(out)]) == 0
    assert np.loadtxt(out).shape[1] == 7


def test_converge_rates_and_plot(tmp_path, config, capsys):
    out = tmp_path / "records.csv"
    svg = tmp_path / "plot.svg"
    assert main(["converge", "--config", str(config), "--out", str(out), "--plot", str(svg)]) == 0
    recs = read_records(str(out))
    assert [r.eps for r in recs] == [2.0**-4, 2.0**-5, 2.0**-6, 2.0**-7]
    assert all(r.ok for r in recs)
    assert svg.read_text().lstrip().startswith("<?xml")
    capsys.readouterr()
    assert main(["rates", "--in", str(out), "--field", "phi_c1_error"]) == 0
    slope = float(capsys.readouterr().out)
    assert slope > 0.8


def test_bad_config_reports_error(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    assert main(["converge", "--config", str(cfg)]) == 2
    assert "unknown key" in capsys.readouterr().err
    assert main(["rates", "--in", str(tmp_path / "missing.csv")]) == 2


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
