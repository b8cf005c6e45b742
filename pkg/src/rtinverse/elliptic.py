"""Poisson solver on the disk, the dbar cascade and Hodge decomposition."""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded

from .grid import PolarGrid, d, dbar, divergence, gradient
from .transport import MediumSpec


def _radial_bands(grid: PolarGrid, m: float) -> np.ndarray:
    """Banded form of the finite-volume radial operator for angular mode ``m``.

    Cell ``i`` spans ``[i dr, (i+1) dr]``; the face flux at ``r = 0`` vanishes
    and the outer face uses the Dirichlet value half a cell away.
    """
    nr, dr = grid.nr, grid.dr
    r = grid.radii
    inner = np.arange(nr) * dr          # r_{i-1/2}
    outer = (np.arange(nr) + 1) * dr    # r_{i+1/2}
    scale = 1.0 / (r * dr * dr)
    lower = inner * scale
    upper = outer * scale
    main = -(inner + outer) * scale - m * m / (r * r)
    # outer face: (bc - u)/(dr/2) replaces (u_{i+1} - u_i)/dr
    main[-1] = -(inner[-1] + 2 * outer[-1]) * scale[-1] - m * m / (r[-1] ** 2)
    ab = np.zeros((3, nr))
    ab[0, 1:] = upper[:-1]
    ab[1] = main
    ab[2, :-1] = lower[1:]
    return ab


def _boundary_factor(grid: PolarGrid) -> float:
    """Coefficient of the Dirichlet value in the outermost cell equation."""
    return 2 * 1.0 / (grid.radii[-1] * grid.dr * grid.dr)


def poisson_dirichlet(rhs: np.ndarray, bc: np.ndarray, grid: PolarGrid) -> np.ndarray:
    """Solve ``Lap u = rhs`` in the disk with ``u = bc`` on the circle.

    Angular Fourier decomposition in beta; each mode is a tridiagonal radial
    problem (second-order finite volumes, zero flux through the center).
    """
    rhs = np.asarray(rhs)
    bc = np.asarray(bc)
    if rhs.shape != grid.shape:
        raise ValueError(f"rhs shape {rhs.shape} != grid {grid.shape}")
    complex_ = np.iscomplexobj(rhs) or np.iscomplexobj(bc)
    R = np.fft.fft(rhs, axis=-1)
    B = np.fft.fft(np.broadcast_to(bc, (grid.nbeta,)), axis=-1)
    m = np.fft.fftfreq(grid.nbeta, d=1.0 / grid.nbeta)
    bfac = _boundary_factor(grid)
    U = np.empty((grid.nr, grid.nbeta), dtype=complex)
    for col, mm in enumerate(m):
        b = R[:, col].astype(complex)
        b[-1] -= bfac * B[col]
        U[:, col] = solve_banded((1, 1), _radial_bands(grid, mm), b)
    u = np.fft.ifft(U, axis=-1)
    return u if complex_ else u.real


def laplacian(u: np.ndarray, bc: np.ndarray, grid: PolarGrid) -> np.ndarray:
    """The discrete Laplacian inverted by :func:`poisson_dirichlet`."""
    Uf = np.fft.fft(u, axis=-1)
    Bf = np.fft.fft(np.broadcast_to(bc, (grid.nbeta,)), axis=-1)
    m = np.fft.fftfreq(grid.nbeta, d=1.0 / grid.nbeta)
    out = np.empty_like(Uf)
    bfac = _boundary_factor(grid)
    for col, mm in enumerate(m):
        ab = _radial_bands(grid, mm)
        x = Uf[:, col]
        y = ab[1] * x
        y[:-1] += ab[0, 1:] * x[1:]
        y[1:] += ab[2, :-1] * x[:-1]
        y[-1] += bfac * Bf[col]
        out[:, col] = y
    res = np.fft.ifft(out, axis=-1)
    return res if (np.iscomplexobj(u) or np.iscomplexobj(bc)) else res.real


def dbar_cascade(deep: tuple[np.ndarray, np.ndarray], medium: MediumSpec,
                 g: np.ndarray) -> list[np.ndarray]:
    """Recover ``u_{-M+1}, ..., u_{-1}`` from ``(u_{-M-1}, u_{-M})``.

    Step ``j`` solves ``Lap u_{-M+j} = -4 d^2 u_{-M+j-2} - 4 d[(a - k_{-M+j-1}) u_{-M+j-1}]``
    with boundary values ``g_{-M+j}`` (``g`` is the boundary mode stack).
    Returned in order ``[u_{-M+1}, ..., u_{-1}]``.
    """
    grid = medium.grid
    M = medium.M
    prev2, prev1 = deep
    out = []
    for j in range(1, M):
        n = M - j                      # the mode being solved is -n
        coef = medium.a - medium.k(n + 1)
        rhs = -4 * d(d(prev2, grid), grid) - 4 * d(coef * prev1, grid)
        u = poisson_dirichlet(rhs, g[n], grid)
        out.append(u)
        prev2, prev1 = prev1, u
    return out


def cascade_residual(u_n: np.ndarray, u_n1: np.ndarray, u_n2: np.ndarray,
                     coef: np.ndarray, grid: PolarGrid) -> float:
    """Relative size of ``dbar u_n + d u_{n-2} + coef u_{n-1}``."""
    res = dbar(u_n, grid) + d(u_n2, grid) + coef * u_n1
    scale = grid.l2_norm(coef * u_n1) + grid.l2_norm(d(u_n2, grid))
    return grid.l2_norm(res) / scale if scale > 0 else grid.l2_norm(res)


def hodge_decompose(F: np.ndarray, grid: PolarGrid) -> tuple[np.ndarray, np.ndarray]:
    """Split ``F = grad phi + Fs`` with ``phi = 0`` on the circle."""
    phi = poisson_dirichlet(divergence(F, grid), 0.0, grid)
    return phi, F - gradient(phi, grid)
