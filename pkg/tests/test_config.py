from pathlib import Path

import numpy as np
import pytest

from rtinverse.config import ConfigError, load_config, mask_array, parse_config
from rtinverse.grid import PolarGrid, write_field_csv

BASE = """
[grid]
Nr = 16
Nbeta = 64
Ntheta = 32

[medium]
a = constant(0.5)
a = gaussian(0.2, 0.0, 0.35, 0.8)
k0 = constant(0.1)
M = 1

[source]
f0 = gaussian(0.1, 0.2, 0.25, 1.0)
F = perp_gradient
psi = gaussian(-0.2, -0.1, 0.25, 1.0)
"""


def test_parse_basic():
    cfg = parse_config(BASE)
    assert (cfg.nr, cfg.nbeta, cfg.ntheta) == (16, 64, 32)
    assert cfg.modes == 15
    assert cfg.M == 1 and cfg.seed == 0 and cfg.noise_std == 0.0
    assert cfg.source.F_kind == "perp_gradient"


def test_repeated_keys_are_summed():
    cfg = parse_config(BASE)
    grid = cfg.grid()
    x, y = grid.z.real, grid.z.imag
    expect = 0.5 + 0.8 * np.exp(-((x - 0.2) ** 2 + y**2) / 0.35**2)
    assert np.allclose(cfg.medium(grid).a, expect, atol=1e-15)


def test_perp_gradient_source():
    cfg = parse_config(BASE)
    grid = cfg.grid()
    F = cfg.source.build(grid).F
    x, y = grid.z.real, grid.z.imag
    v = np.exp(-((x + 0.2) ** 2 + (y + 0.1) ** 2) / 0.25**2)
    gx, gy = -2 * (x + 0.2) / 0.25**2 * v, -2 * (y + 0.1) / 0.25**2 * v
    assert np.allclose(F, np.stack([-gy, gx]), atol=1e-13)


def test_negative_width_names_line_and_field():
    text = BASE.replace("k0 = constant(0.1)", "k0 = gaussian(0, 0, -0.3, 1)")
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    lineno = text.splitlines().index("k0 = gaussian(0, 0, -0.3, 1)") + 1
    assert exc.value.line == lineno
    assert "k0.width" in str(exc.value) and f"line {lineno}" in str(exc.value)


@pytest.mark.parametrize("bad", [
    "[nonsense]\nx = 1",
    "[grid]\nNr = sixteen",
    "[grid]\nNbeta = 63",
    "[grid]\nNtheta = 32\nN = 16",
    "[grid]\nbogus = 3",
    "[medium]\na = sin(3)",
    "[medium]\na = gaussian(1, 2)",
    "[medium]\nk2 = constant(0.1)\nM = 1",
    "[source]\nF = curl",
    "[source]\nF = gradient",
    "[run]\nseed = -1",
    "[run]\nmask = disk(0.5)",
    "a = constant(1)",
    "[grid\nNr = 8",
])
def test_malformed(bad):
    with pytest.raises(ConfigError):
        parse_config(bad)


def test_seed_range():
    assert parse_config(f"[run]\nseed = {2**64 - 1}").seed == 2**64 - 1
    with pytest.raises(ConfigError):
        parse_config(f"[run]\nseed = {2**64}")


def test_sha_changes_with_text():
    a = parse_config(BASE)
    b = parse_config(BASE + "\n# comment\n")
    assert a.sha256 != b.sha256
    assert a.sha256 == parse_config(BASE).sha256


def test_file_primitive(tmp_path):
    grid = PolarGrid(16, 64)
    field = np.cos(grid.z.real) * grid.z.imag
    write_field_csv(tmp_path / "a.csv", grid, field, ["test"])
    p = tmp_path / "x.cfg"
    p.write_text(BASE.replace("a = constant(0.5)", "a = file(a.csv)"))
    cfg = load_config(str(p))
    a = cfg.medium(cfg.grid()).a
    x, y = grid.z.real, grid.z.imag
    assert np.allclose(a, field + 0.8 * np.exp(-((x - 0.2) ** 2 + y**2) / 0.35**2))
    # a mismatched grid is reported
    p.write_text(BASE.replace("Nr = 16", "Nr = 32").replace("Nbeta = 64", "Nbeta = 128")
                 .replace("a = constant(0.5)", "a = file(a.csv)"))
    cfg = load_config(str(p))
    with pytest.raises(ConfigError):
        cfg.medium(cfg.grid())


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/x.cfg")


def test_mask_annulus():
    cfg = parse_config(BASE + "\n[run]\nmask = annulus(0.2, 0.6)\n")
    grid = cfg.grid()
    m = mask_array(cfg, grid)
    r = np.abs(grid.z)
    assert np.array_equal(m, (r >= 0.2) & (r <= 0.6))
    assert mask_array(parse_config(BASE), grid).all()


def test_refinement_levels_and_ray_step():
    cfg = parse_config(BASE + "\n[grid]\nh_ray = 0.01\n")
    g1 = cfg.grid(1)
    assert (g1.nr, g1.nbeta) == (32, 128)
    assert cfg.ray_step(g1) == pytest.approx(0.005)
    assert parse_config(BASE).ray_step(g1) == pytest.approx(0.5 / 32)


def test_shipped_configs_parse():
    paths = sorted((Path(__file__).parent.parent / "configs").glob("*.cfg"))
    assert paths
    for p in paths:
        load_config(str(p))
