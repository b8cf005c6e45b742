import subprocess
import sys

import numpy as np
import pytest

from rtinverse.cli import (EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE, EXIT_OK, EXIT_PRECONDITION,
                           main)
from rtinverse.transport import BoundaryData

SMALL = """
[grid]
Nr = 16
Nbeta = 64
Ntheta = 32

[medium]
a = constant(0.6)
k0 = constant(0.2)
k1 = constant(0.1)
M = 2

[source]
f0 = gaussian(0.1, 0.2, 0.3, 1.0)
F = perp_gradient
psi = gaussian(-0.2, -0.1, 0.3, 1.0)
"""

ZERO = """
[grid]
Nr = 8
Nbeta = 32
Ntheta = 16

[medium]
a = constant(0.5)
k0 = constant(0.1)

[source]
"""

GAUGE = """
[grid]
Nr = 16
Nbeta = 64
Ntheta = 16

[medium]
a = constant(0.6)
k0 = constant(0.2)

[source]
f0 = gaussian(0.1, 0.2, 0.25, 1.0)
{extra}

[source_tilde]
f0 = gaussian(0.1, 0.2, 0.25, 1.0)
F = perp_gradient
psi = gaussian(0.0, 0.3, 0.3, 0.5)
"""


def write_cfg(tmp_path, text, name="c.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


@pytest.fixture(scope="module")
def forward_small(tmp_path_factory):
    d = tmp_path_factory.mktemp("fwd")
    cfg = write_cfg(d, SMALL)
    assert main(["forward", "--config", cfg, "--out", str(d / "out")]) == EXIT_OK
    return d, cfg


def test_zero_source_gives_zero_data(tmp_path):
    cfg = write_cfg(tmp_path, ZERO)
    assert main(["forward", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    g = BoundaryData.read_csv(tmp_path / "o" / "g.csv")
    assert g.values.shape == (16, 32) and not np.any(g.values)


def test_forward_outputs_deterministic(forward_small, tmp_path):
    d, cfg = forward_small
    assert main(["forward", "--config", cfg, "--out", str(tmp_path / "again")]) == EXIT_OK
    names = sorted(p.name for p in (d / "out").iterdir() if p.name != "timings.txt")
    assert {"g.csv", "u0.csv", "forward_report.txt", "g.png", "u0.png"} <= set(names)
    for n in names:
        assert (d / "out" / n).read_bytes() == (tmp_path / "again" / n).read_bytes(), n


def test_manifest_in_every_output(forward_small, tmp_path):
    d, cfg = forward_small
    out = tmp_path / "rec"
    assert main(["reconstruct", "--config", cfg, "--data", str(d / "out" / "g.csv"),
                 "--variant", "divfree", "--out", str(out)]) == EXIT_OK
    for folder in (d / "out", out):
        for p in folder.iterdir():
            head = p.read_bytes()
            if p.suffix == ".png":
                assert b"config_sha256=" in head, p
            else:
                assert head.startswith(b"# rtinverse "), p
                assert b"config_sha256=" in head.split(b"\n", 1)[0], p


def test_reconstruct_divfree_report(forward_small, tmp_path):
    d, cfg = forward_small
    out = tmp_path / "rec"
    assert main(["reconstruct", "--config", cfg, "--data", str(d / "out" / "g.csv"),
                 "--variant", "divfree", "--out", str(out)]) == EXIT_OK
    text = (out / "recon_report.txt").read_text()
    assert "noisy_data = no" in text
    line = next(ln for ln in text.splitlines() if ln.startswith("F_rel_l2"))
    assert float(line.split("=")[1]) < 0.05


def test_noise_flagged(forward_small, tmp_path):
    d, _ = forward_small
    cfg = write_cfg(tmp_path, SMALL + "\n[solver]\nnoise_std = 0.001\n")
    out = tmp_path / "noisy"
    assert main(["reconstruct", "--config", cfg, "--data", str(d / "out" / "g.csv"),
                 "--variant", "solenoidal", "--out", str(out), "--seed", "3"]) == EXIT_OK
    assert "noisy_data = yes" in (out / "recon_report.txt").read_text()


def test_malformed_config_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "[medium]\nk0 = gaussian(0, 0, -1, 1)\n")
    assert main(["forward", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "line 2" in capsys.readouterr().err


def test_twodata_without_second_file(forward_small, tmp_path):
    d, cfg = forward_small
    assert main(["reconstruct", "--config", cfg, "--data", str(d / "out" / "g.csv"),
                 "--variant", "twodata", "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_random_data_exit_code(forward_small, tmp_path):
    _, cfg = forward_small
    rng = np.random.default_rng(0)
    p = tmp_path / "junk.csv"
    BoundaryData(rng.standard_normal((32, 64))).write_csv(p, ["junk"])
    assert main(["reconstruct", "--config", cfg, "--data", str(p), "--variant", "solenoidal",
                 "--out", str(tmp_path / "o")]) == EXIT_DATA


def test_grid_mismatch_exit_code(forward_small, tmp_path):
    _, cfg = forward_small
    p = tmp_path / "other.csv"
    BoundaryData(np.zeros((32, 32))).write_csv(p, ["wrong grid"])
    assert main(["reconstruct", "--config", cfg, "--data", str(p), "--variant", "solenoidal",
                 "--out", str(tmp_path / "o")]) == EXIT_PRECONDITION
    assert main(["reconstruct", "--config", cfg, "--data", str(tmp_path / "missing.csv"),
                 "--variant", "solenoidal", "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_divergence_exit_code(tmp_path):
    text = ZERO.replace("a = constant(0.5)", "a = constant(0.2)").replace(
        "k0 = constant(0.1)", "k0 = constant(3.0)")
    text += "f0 = constant(1.0)\n\n[solver]\nmax_iter = 30\n"
    cfg = write_cfg(tmp_path, text)
    assert main(["forward", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_DIVERGENCE


def test_gauge_identical_sources(tmp_path):
    text = GAUGE.replace("{extra}", "").replace(
        "[source_tilde]\nf0 = gaussian(0.1, 0.2, 0.25, 1.0)\nF = perp_gradient\n"
        "psi = gaussian(0.0, 0.3, 0.3, 0.5)", "[source_tilde]\nf0 = gaussian(0.1, 0.2, 0.25, 1.0)")
    cfg = write_cfg(tmp_path, text)
    assert main(["gauge", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    text = (tmp_path / "o" / "gauge_report.txt").read_text()
    assert "discrepancy_sup = 0\n" in text


def test_gauge_pair(tmp_path):
    cfg = write_cfg(tmp_path, GAUGE.replace("{extra}", "f0 = gaussian(-0.2, -0.1, 0.2, 0.6)"))
    assert main(["gauge", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    rep = (tmp_path / "o" / "gauge_report.txt").read_text()
    # on this coarse grid the discrepancy is discretization error; compare it
    # with the data change caused by a non-gauge perturbation of F
    ratio = next(ln for ln in rep.splitlines() if ln.startswith("discrepancy_to_perturbation"))
    assert float(ratio.split("=")[1]) < 0.1


def test_gauge_nonvanishing_psi(tmp_path):
    cfg = write_cfg(tmp_path, GAUGE.replace("{extra}", "f0 = constant(0.3)"))
    assert main(["gauge", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_PRECONDITION


def test_convergence_levels_validation(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    assert main(["convergence", "--config", cfg, "--levels", "1",
                 "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_convergence_two_levels(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    out = tmp_path / "conv"
    assert main(["convergence", "--config", cfg, "--levels", "2", "--out", str(out)]) == EXIT_OK
    lines = [ln for ln in (out / "convergence.csv").read_text().splitlines()
             if not ln.startswith("#")]
    header = lines[0].split(",")
    rows = [dict(zip(header, ln.split(","))) for ln in lines[1:]]
    assert len(rows) == 2
    assert 1.8 < float(rows[1]["poisson_order"]) < 2.2
    assert float(rows[1]["recon_F_rel_l2"]) < float(rows[0]["recon_F_rel_l2"])
    assert (out / "convergence.png").exists()


def test_selftest_passes(capsys):
    assert main(["selftest"]) == EXIT_OK
    assert "FAIL" not in capsys.readouterr().out


def test_console_entry_point_runs(tmp_path):
    cfg = write_cfg(tmp_path, "[grid]\nNr = 3\n")
    proc = subprocess.run([sys.executable, "-m", "rtinverse.cli", "forward", "--config", cfg],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_CONFIG
    assert "Nr" in proc.stderr
