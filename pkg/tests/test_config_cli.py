import filecmp
import os

import numpy as np
import pytest

from poroplate import cli
from poroplate import io as pio
from poroplate.config import DEFAULT_CONFIG_TEXT, default_config, parse_config
from poroplate.errors import ConfigError

TINY = """\
[geometry]
gel_box = 0.25 0.75 0.25 0.75
omega = 0.0 1.0 0.0 1.0
eps_list = 0.25
cell_n = 4
plate_m = 4

[material]
fiber = 10.0 0.3
gel = 1.0 0.35

[loads]
f3 = 1.0 0 0 1
h = 1.0 0 0 1

[time]
T = 0.25
nsteps = 2
"""


def test_default_config_parses():
    cfg = default_config()
    assert cfg.cell_n == 4
    assert cfg.eps_list == [0.25, 0.125, 0.0625]
    assert cfg.biot.alpha == 1.0
    assert not cfg.loads.f3.is_zero()


def test_unknown_section_reports_line():
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("[nosuch]\nkey = 1\n")


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("[time]\nbogus = 1\n")


def test_bad_monomial_rejected():
    with pytest.raises(ConfigError, match="monomial"):
        parse_config("[loads]\nf3 = 1.0 0 0\n")


def test_eps_must_tile_omega():
    text = TINY.replace("eps_list = 0.25", "eps_list = 0.3")
    with pytest.raises(ConfigError, match="tile"):
        parse_config(text)


def test_tolerances_positive():
    text = TINY + "\n[solver]\ntol_cell = -1\n"
    with pytest.raises(ConfigError):
        parse_config(text)


def test_write_default_config(tmp_path):
    path = tmp_path / "demo.cfg"
    assert cli.main(["cell", "--write-default-config", str(path)]) == 0
    assert parse_config(path.read_text()).cell_n == default_config().cell_n


def test_cli_bad_config_exit_code(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[geometry]\ngel_box = 0 1 0 1\n")
    code = cli.main(["cell", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_CONFIG


def test_cli_missing_config_exit_code(tmp_path):
    code = cli.main(["cell", "--config", str(tmp_path / "nope.cfg"),
                     "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_CONFIG


def test_cli_micro_deterministic_rerun(tmp_path):
    cfgp = tmp_path / "tiny.cfg"
    cfgp.write_text(TINY)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["micro", "--config", str(cfgp), "--out", str(out1)]) == 0
    assert cli.main(["micro", "--config", str(cfgp), "--out", str(out2)]) == 0
    assert filecmp.cmp(out1 / "micro_norms.csv", out2 / "micro_norms.csv", shallow=False)
    first = (out1 / "micro_norms.csv").read_text().splitlines()
    assert first[0].startswith("t,")


def test_cli_homogenize_artifacts(tmp_path):
    cfgp = tmp_path / "tiny.cfg"
    cfgp.write_text(TINY)
    out = tmp_path / "h"
    assert cli.main(["homogenize", "--config", str(cfgp), "--out", str(out)]) == 0
    kv = pio.read_keyvalues(out / "homogenized.kv")
    assert kv["a_1111"] > 0
    assert (out / "report.txt").exists()


def test_hom_keyvalue_round_trip(tmp_path):
    from poroplate.cell import HomogenizedTensor

    rng = np.random.default_rng(0)
    A = rng.standard_normal((3, 3))
    hom = HomogenizedTensor(a_eng=A @ A.T + 3 * np.eye(3), b_eng=0.1 * np.eye(3),
                            c_eng=np.eye(3))
    path = tmp_path / "h.kv"
    pio.write_keyvalues(path, pio.hom_keyvalues(hom))
    back = cli._hom_from_file(path)
    assert np.allclose(back.a_eng, hom.a_eng)
    assert np.allclose(back.b_eng, hom.b_eng)


def test_tampered_coefficients_fail_oracle_check():
    from poroplate.verify import AcceptanceSuite

    suite = AcceptanceSuite()
    mesh, cs, hom, op, mom = suite.cell_pipeline()
    from poroplate.cell import HomogenizedTensor

    bad = HomogenizedTensor(a_eng=hom.a_eng, b_eng=hom.b_eng + 0.05 * np.eye(3),
                            c_eng=hom.c_eng)
    res = suite.check_ac5(hom_override=bad)
    assert not res.passed
    good = suite.check_ac5()
    assert good.passed


def test_vtk_writer_smoke(tmp_path, cell_mesh4):
    path = tmp_path / "cell.vtk"
    pio.write_vtk(path, cell_mesh4.nodes, cell_mesh4.elems, pio.VTK_HEX,
                  point_data={"z": cell_mesh4.nodes[:, 2]},
                  cell_data={"phase": cell_mesh4.phase.astype(float)})
    text = path.read_text().splitlines()
    assert text[0].startswith("# vtk DataFile")
    assert any(line.startswith("CELL_TYPES") for line in text)
    assert sum(1 for line in text if line == "12") == cell_mesh4.n_elems


CONVERGE_CFG = """\
[geometry]
gel_box = 0.25 0.75 0.25 0.75
omega = 0.0 1.0 0.0 1.0
eps_list = 0.25 0.125
cell_n = 4
plate_m = 4

[loads]
f3 = 1.0 0 0 1
h = 1.0 0 0 1

[time]
T = 0.25
nsteps = 2

[output]
formats = csv
"""


def test_cli_converge_csv_shape_and_verdict(tmp_path):
    import csv

    cfgp = tmp_path / "c.cfg"
    cfgp.write_text(CONVERGE_CFG)
    out = tmp_path / "conv"
    code = cli.main(["converge", "--config", str(cfgp), "--out", str(out)])
    assert code == 0
    with open(out / "convergence.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 2  # one row per eps
    for col in ("e_inplane", "e_deflection", "e_strain", "e_pressure"):
        assert col in rows[0]
        assert float(rows[1][col]) < float(rows[0][col])
    kv = (out / "convergence_verdict.txt").read_text()
    assert "verdict = pass" in kv


def test_cli_micro_snapshots(tmp_path):
    cfgp = tmp_path / "t.cfg"
    cfgp.write_text(TINY + "\n[output]\nformats = csv vtk\nsnapshot_every = 1\n")
    out = tmp_path / "snap"
    assert cli.main(["micro", "--config", str(cfgp), "--out", str(out)]) == 0
    snaps = sorted(p.name for p in out.glob("micro_*.vtk"))
    assert snaps == ["micro_0000.vtk", "micro_0001.vtk", "micro_0002.vtk"]
