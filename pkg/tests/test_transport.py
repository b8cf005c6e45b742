import numpy as np
import pytest
from scipy.integrate import cumulative_trapezoid, quad, trapezoid

from rtinverse.grid import DirectionGrid, OutOfDomainError, PolarGrid, interpolate_many
from rtinverse.transport import (BoundaryData, DivergenceError, MediumSpec, SourceSpec,
                                 SubcriticalityError, apply_K, apply_T1inv, apply_T1inv_at,
                                 extract_boundary_data, mass_balance, ray_integral, solve_forward)


def gauss(z, c, w):
    return np.exp(-np.abs(z - c) ** 2 / w**2)


@pytest.fixture(scope="module")
def grid():
    return PolarGrid(32, 128)


def test_constant_attenuation_at_center(grid):
    D, tau = ray_integral(np.full(grid.shape, 0.7), 0.0, 1.234)
    assert D == pytest.approx(0.7, abs=1e-12)
    assert tau == pytest.approx(1.0)


def test_zero_attenuation(grid):
    D, tau = ray_integral(np.zeros(grid.shape), 0.3 + 0.1j, 0.5)
    assert D == 0.0
    z, th = 0.3 + 0.1j, 0.5
    e = np.exp(1j * th)
    zt = (z * np.conj(e)).real
    assert tau == pytest.approx(-zt + np.sqrt(1 - abs(z) ** 2 + zt**2))


def test_ray_integral_against_quadrature_of_interpolant(grid):
    a = gauss(grid.z, 0.2 - 0.1j, 0.4)
    rng = np.random.default_rng(5)
    z = 0.9 * np.sqrt(rng.random(50)) * np.exp(2j * np.pi * rng.random(50))
    th = 2 * np.pi * rng.random(50)
    for zk, tk in zip(z, th):
        D, tau = ray_integral(a, zk, tk, h_ray=0.05 / grid.nr)
        # 10x finer sampling of the same interpolant
        t = np.linspace(0, tau, int(np.ceil(tau / (0.005 / grid.nr))) + 1)
        oracle = trapezoid(interpolate_many(a, zk + t * np.exp(1j * tk)), t)
        assert D == pytest.approx(oracle, abs=1e-6)


def test_ray_integral_converges_to_analytic():
    errs = []
    c, w = 0.2 - 0.1j, 0.4
    z0, th = -0.3 + 0.2j, 0.7
    e = np.exp(1j * th)
    for nr in (32, 64):
        g = PolarGrid(nr, 4 * nr)
        D, tau = ray_integral(gauss(g.z, c, w), z0, th)
        exact, _ = quad(lambda t: gauss(z0 + t * e, c, w), 0, tau, epsabs=1e-13)
        errs.append(abs(D - exact))
    assert errs[1] < 1e-3
    assert errs[0] / errs[1] > 3


def test_T1inv_geometry(grid):
    dirs = DirectionGrid(8)
    med = MediumSpec(grid, np.zeros(grid.shape))
    ones = np.ones((8,) + grid.shape)
    out = apply_T1inv_at(ones, med, dirs, [0.0])
    assert out[:, 0] == pytest.approx(np.ones(8), abs=1e-12)
    # backward exit length from a generic node
    u = apply_T1inv(ones, med, dirs)
    z = grid.z[20, 33]
    zt = (z * np.exp(-1j * dirs.angles)).real
    tau_back = zt + np.sqrt(1 - abs(z) ** 2 + zt**2)
    assert u[:, 20, 33] == pytest.approx(tau_back, rel=1e-10)


def test_T1inv_constant_attenuation_closed_form(grid):
    dirs = DirectionGrid(8)
    c = 0.8
    med = MediumSpec(grid, np.full(grid.shape, c))
    out = apply_T1inv_at(np.ones((8,) + grid.shape), med, dirs, [0.0])
    assert out[:, 0] == pytest.approx(np.full(8, (1 - np.exp(-c)) / c), abs=1e-5)


def test_T1inv_against_nested_quadrature():
    grid = PolarGrid(32, 128)
    dirs = DirectionGrid(8)
    a = 0.5 + gauss(grid.z, 0.1, 0.5)
    s = gauss(grid.z, -0.2 + 0.1j, 0.3)
    med = MediumSpec(grid, a)
    z0 = 0.25 - 0.35j
    out = apply_T1inv_at(np.broadcast_to(s, (8,) + grid.shape).copy(), med, dirs, [z0],
                         h_ray=0.02 / grid.nr)
    for m, th in enumerate(dirs.angles):
        e = np.exp(1j * th)
        zt = (z0 * np.conj(e)).real
        tau = zt + np.sqrt(1 - abs(z0) ** 2 + zt**2)
        # nested quadrature on a much finer line sampling
        t = np.linspace(0, tau, 40001)
        pts = z0 - t * e
        att = cumulative_trapezoid(interpolate_many(a, pts), t, initial=0.0)
        oracle = trapezoid(np.exp(-att) * interpolate_many(s, pts), t)
        assert out[m, 0] == pytest.approx(oracle, abs=1e-5)


def test_T1inv_rejects_points_outside(grid):
    med = MediumSpec(grid, np.zeros(grid.shape))
    with pytest.raises(OutOfDomainError):
        apply_T1inv_at(np.zeros((4,) + grid.shape), med, DirectionGrid(4), [1.5])


def test_K_isotropic_and_constant(grid):
    rng = np.random.default_rng(2)
    k0 = 0.2 + 0.1 * rng.random(grid.shape)
    med = MediumSpec(grid, np.ones(grid.shape), [k0])
    u = rng.standard_normal((16,) + grid.shape)
    assert np.allclose(apply_K(u, med), k0 * u.mean(axis=0), atol=1e-14)
    k1 = 0.05 * rng.random(grid.shape)
    med2 = MediumSpec(grid, np.ones(grid.shape), [k0, k1])
    assert np.allclose(apply_K(np.ones((16,) + grid.shape), med2), k0, atol=1e-14)


def test_K_against_dense_convolution():
    grid = PolarGrid(8, 16)
    rng = np.random.default_rng(4)
    ks = [rng.random(grid.shape) * 0.1 for _ in range(3)]
    med = MediumSpec(grid, np.ones(grid.shape), ks)
    ntheta = 16
    u = rng.standard_normal((ntheta,) + grid.shape)
    th = DirectionGrid(ntheta).angles
    oracle = np.zeros_like(u)
    for m in range(ntheta):
        for mp in range(ntheta):
            dphi = th[m] - th[mp]
            kern = ks[0] + 2 * ks[1] * np.cos(dphi) + 2 * ks[2] * np.cos(2 * dphi)
            oracle[m] += kern * u[mp] / ntheta
    assert np.max(np.abs(apply_K(u, med) - oracle)) < 1e-10


def small_setup(nr=16, ntheta=16):
    grid = PolarGrid(nr, 4 * nr)
    dirs = DirectionGrid(ntheta)
    src = SourceSpec(grid, gauss(grid.z, 0.1j, 0.3), np.zeros((2,) + grid.shape))
    return grid, dirs, src


def test_nonscattering_one_iteration():
    grid, dirs, src = small_setup()
    med = MediumSpec(grid, 0.5 + gauss(grid.z, 0.2, 0.3))
    res = solve_forward(med, src, dirs)
    assert res.iterations == 1
    assert np.array_equal(res.u, apply_T1inv(src.angular(dirs), med, dirs))


def test_zero_source():
    grid, dirs, _ = small_setup()
    med = MediumSpec(grid, np.ones(grid.shape), [np.full(grid.shape, 0.3)])
    res = solve_forward(med, SourceSpec.zero(grid), dirs)
    assert not np.any(res.u)
    assert not np.any(extract_boundary_data(res.u, dirs).values)


def test_mass_balance_scattering():
    # same isotropic source as the shipped media configs
    grid = PolarGrid(64, 256)
    dirs = DirectionGrid(32)
    src = SourceSpec(grid, gauss(grid.z, 0.1 + 0.2j, 0.25), np.zeros((2,) + grid.shape))
    med = MediumSpec(grid, np.ones(grid.shape), [np.full(grid.shape, 0.3)])
    res = solve_forward(med, src, dirs)
    mb = mass_balance(res.u, extract_boundary_data(res.u, dirs), med, src)
    assert mb["relative_error"] < 1e-4


def test_divergence_reported():
    grid, dirs, src = small_setup()
    med = MediumSpec(grid, np.full(grid.shape, 0.2), [np.full(grid.shape, 3.0)])
    with pytest.raises(DivergenceError):
        solve_forward(med, src, dirs, max_iter=30)


def test_subcriticality_check():
    grid = PolarGrid(8, 16)
    med = MediumSpec(grid, np.full(grid.shape, 0.3), [np.full(grid.shape, 0.3)])
    with pytest.raises(SubcriticalityError):
        med.check_subcritical()


def test_boundary_data_structure_and_xray():
    # a = k = 0 and a narrow bump: data are the chord integrals of f0
    grid = PolarGrid(64, 256)
    dirs = DirectionGrid(16)
    c, w = 0.05 - 0.1j, 0.15
    src = SourceSpec(grid, gauss(grid.z, c, w), np.zeros((2,) + grid.shape))
    res = solve_forward(MediumSpec(grid, np.zeros(grid.shape)), src, dirs)
    g = extract_boundary_data(res.u, dirs)
    zeta = grid.boundary.zeta
    cosang = np.cos(dirs.angles[:, None] - grid.boundary.betas[None, :])
    assert not np.any(g.values[cosang <= 0])
    m, j = 2, 40
    assert cosang[m, j] > 0
    e = np.exp(1j * dirs.angles[m])
    zt = (zeta[j] * np.conj(e)).real
    oracle, _ = quad(lambda t: gauss(zeta[j] - t * e, c, w), 0, 2 * zt, epsabs=1e-12)
    assert g.values[m, j] == pytest.approx(oracle, rel=2e-2)


def test_boundary_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    g = BoundaryData(rng.standard_normal((8, 16)))
    p = tmp_path / "g.csv"
    g.write_csv(p, ["manifest"])
    assert p.read_text().startswith("# manifest\nbeta,theta,value\n")
    assert np.array_equal(BoundaryData.read_csv(p).values, g.values)
