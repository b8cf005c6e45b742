"""Quick built-in checks on small grids (a few seconds)."""

from __future__ import annotations

import numpy as np

from .aanalytic import bukhgeim_cauchy, conjugation_coeffs, compute_h, convolve_nonneg, range_residual
from .config import parse_config, ConfigError
from .elliptic import poisson_dirichlet
from .grid import DirectionGrid, PolarGrid, angular_modes
from .report import Report, manifest
from .transport import (MediumSpec, SourceSpec, apply_T1inv, extract_boundary_data, mass_balance,
                        solve_forward)


def _poisson_order() -> tuple[float, bool]:
    errs = []
    for nr in (16, 32, 64):
        grid = PolarGrid(nr, 4 * nr)
        x, y = grid.z.real, grid.z.imag
        exact = np.exp(x) * np.sin(2 * y)
        rhs = -3 * exact
        zb = grid.boundary.zeta
        u = poisson_dirichlet(rhs, np.exp(zb.real) * np.sin(2 * zb.imag), grid)
        errs.append(np.max(np.abs(u - exact)))
    order = float(np.log2(errs[1] / errs[2]))
    return order, 1.8 <= order <= 2.2


def _bukhgeim_z2() -> tuple[float, bool]:
    grid = PolarGrid(16, 64)
    zb = grid.boundary.zeta
    g = np.zeros((8, grid.nbeta), dtype=complex)
    g[0] = zb**2
    err = float(np.max(np.abs(bukhgeim_cauchy(g, grid)[0] - grid.z**2)))
    return err, err < 1e-10


def _range_random() -> tuple[float, bool]:
    rng = np.random.default_rng(7)
    g = rng.standard_normal((16, 64)) + 1j * rng.standard_normal((16, 64))
    res = range_residual(g, normalize=True)
    return res, res > 0.5


def _transport_checks() -> dict:
    grid = PolarGrid(16, 64)
    dirs = DirectionGrid(16)
    z = grid.z
    f0 = np.exp(-np.abs(z - 0.2) ** 2 / 0.1)
    src = SourceSpec(grid, f0, np.zeros((2,) + grid.shape))
    a = 0.5 + 0.3 * np.exp(-np.abs(z) ** 2 / 0.2)
    free = MediumSpec(grid, a, [np.zeros(grid.shape)])
    res = solve_forward(free, src, dirs)
    direct = apply_T1inv(src.angular(dirs), free, dirs)
    exact = float(np.max(np.abs(res.u - direct)))
    scat = MediumSpec(grid, a, [0.3 * np.ones(grid.shape)])
    res2 = solve_forward(scat, src, dirs)
    mb = mass_balance(res2.u, extract_boundary_data(res2.u, dirs), scat, src)["relative_error"]
    h = compute_h(a, grid, dirs)
    co = conjugation_coeffs(h, K=7)
    unit = convolve_nonneg(co.alpha, co.beta)
    unit[0] -= 1
    return {
        "nonscattering_vs_T1inv": (exact, exact <= 1e-12 and res.iterations == 1),
        "mass_balance_scattering": (mb, mb < 1e-2),
        "h_negative_mode_mass": (co.negative_mass, co.negative_mass < 1e-2),
        "alpha_beta_unit_defect": (float(np.max(np.abs(unit))), float(np.max(np.abs(unit))) < 1e-2),
        "forward_data_modes_finite": (0.0, bool(np.all(np.isfinite(
            angular_modes(extract_boundary_data(res2.u, dirs).values, 7))))),
    }


def _config_error() -> tuple[float, bool]:
    try:
        parse_config("[medium]\na = gaussian(0, 0, -1, 1)\n", "selftest.cfg")
    except ConfigError as exc:
        return 0.0, "width" in str(exc)
    return 1.0, False


def run_selftest() -> tuple[bool, Report]:
    checks = {
        "poisson_order": _poisson_order(),
        "bukhgeim_cauchy_z2_max_error": _bukhgeim_z2(),
        "range_residual_random_data": _range_random(),
        "config_negative_width_rejected": _config_error(),
    }
    checks.update(_transport_checks())
    rep = Report("self-test", manifest("none", 0))
    rows = []
    ok = True
    for name, (value, passed) in checks.items():
        rows.append([name, value, "pass" if passed else "FAIL"])
        ok &= bool(passed)
        print(f"{'PASS' if passed else 'FAIL'} {name}: {value:.3e}")
    rep.table("checks", ["check", "value", "status"], rows)
    return ok, rep
