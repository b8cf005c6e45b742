"""Unit-disk geometry, polar and angular grids, and derivative operators.

Conventions used throughout the package:

* scalar/complex fields are arrays of shape ``(nr, nbeta)``; node ``(i, j)``
  is the point ``z = r_i exp(i beta_j)`` with ``r_i = (i + 1/2)/nr``;
* vector fields are arrays of shape ``(2, nr, nbeta)``;
* angular fields are arrays of shape ``(ntheta, nr, nbeta)``;
* mode stacks are arrays of shape ``(N + 1, ...)`` whose entry ``n`` holds the
  ``-n`` angular Fourier mode, ``u(z, theta) = sum_n u_n(z) exp(i n theta)``,
  taken against the normalized angular measure.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _kernels


class OutOfDomainError(ValueError):
    """A point lies outside the closed unit disk."""


@dataclass(frozen=True)
class PolarGrid:
    """Cell-centered polar grid on the unit disk."""

    nr: int
    nbeta: int

    def __post_init__(self):
        if self.nr < 4:
            raise ValueError(f"nr must be >= 4, got {self.nr}")
        if self.nbeta < 8 or self.nbeta % 2:
            raise ValueError(f"nbeta must be even and >= 8, got {self.nbeta}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nr, self.nbeta)

    @property
    def dr(self) -> float:
        return 1.0 / self.nr

    @property
    def dbeta(self) -> float:
        return 2 * np.pi / self.nbeta

    @cached_property
    def radii(self) -> np.ndarray:
        return (np.arange(self.nr) + 0.5) / self.nr

    @cached_property
    def betas(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.nbeta) / self.nbeta

    @cached_property
    def z(self) -> np.ndarray:
        """Complex node coordinates, shape ``(nr, nbeta)``."""
        return self.radii[:, None] * np.exp(1j * self.betas)[None, :]

    @cached_property
    def area_weights(self) -> np.ndarray:
        """Midpoint-rule weights ``r dr dbeta`` for integrals over the disk."""
        w = self.radii * self.dr * self.dbeta
        return np.repeat(w[:, None], self.nbeta, axis=1)

    def integrate(self, field: np.ndarray) -> complex | float:
        return np.sum(field * self.area_weights)

    def l2_norm(self, field: np.ndarray) -> float:
        return float(np.sqrt(np.sum(np.abs(field) ** 2 * self.area_weights)))

    @property
    def boundary(self) -> "BoundaryGrid":
        return BoundaryGrid(self.nbeta)

    def refine(self, factor: int = 2) -> "PolarGrid":
        return PolarGrid(self.nr * factor, self.nbeta * factor)

    def evaluate(self, func) -> np.ndarray:
        """Sample ``func(x, y)`` at the grid nodes."""
        return np.asarray(func(self.z.real, self.z.imag))


@dataclass(frozen=True)
class BoundaryGrid:
    """Nodes ``zeta_j = exp(i beta_j)`` on the unit circle."""

    nbeta: int

    @cached_property
    def betas(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.nbeta) / self.nbeta

    @cached_property
    def zeta(self) -> np.ndarray:
        return np.exp(1j * self.betas)

    @property
    def normals(self) -> np.ndarray:
        return self.zeta

    @property
    def arc_weight(self) -> float:
        return 2 * np.pi / self.nbeta


@dataclass(frozen=True)
class DirectionGrid:
    """Uniform directions ``theta_m = 2 pi m / ntheta`` with weight ``1/ntheta``."""

    ntheta: int

    def __post_init__(self):
        if self.ntheta < 4 or self.ntheta % 2:
            raise ValueError(f"ntheta must be even and >= 4, got {self.ntheta}")

    @cached_property
    def angles(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.ntheta) / self.ntheta

    @cached_property
    def cos(self) -> np.ndarray:
        return np.cos(self.angles)

    @cached_property
    def sin(self) -> np.ndarray:
        return np.sin(self.angles)

    @property
    def weight(self) -> float:
        return 1.0 / self.ntheta

    def max_modes(self) -> int:
        return self.ntheta // 2 - 1


# ---------------------------------------------------------------------------
# angular Fourier modes


def angular_modes(field: np.ndarray, N: int) -> np.ndarray:
    """Non-positive angular modes ``<m_0, m_-1, ..., m_-N>`` of an angular field.

    ``field`` has the direction axis first.  ``m_-n = mean_m field_m e^{i n theta_m}``.
    """
    ntheta = field.shape[0]
    if N < 0 or N > ntheta // 2 - 1:
        raise ValueError(f"mode count N={N} too large for ntheta={ntheta}")
    c = np.fft.fft(field, axis=0) / ntheta
    idx = (-np.arange(N + 1)) % ntheta
    return c[idx]


def synthesize(modes: np.ndarray, ntheta: int) -> np.ndarray:
    """Real angular field from its non-positive modes (``u_n = conj(u_-n)``)."""
    theta = 2 * np.pi * np.arange(ntheta) / ntheta
    n = np.arange(modes.shape[0])
    phase = np.exp(-1j * np.outer(theta, n))
    out = np.tensordot(phase, modes, axes=(1, 0))
    return np.real(modes[0])[None] + 2 * np.real(out - modes[0][None])


# ---------------------------------------------------------------------------
# complex derivatives


def _d_beta(field: np.ndarray, nbeta: int) -> np.ndarray:
    k = np.fft.fftfreq(nbeta, d=1.0 / nbeta)
    k[nbeta // 2] = 0.0
    return np.fft.ifft(1j * k * np.fft.fft(field, axis=-1), axis=-1)


def _d_r(field: np.ndarray, dr: float) -> np.ndarray:
    """Fourth-order centered radial differences along full diameters.

    Rings below the innermost one are taken from the opposite spoke (the
    diameter through the origin is uniformly sampled); the two outermost rings
    use one-sided fourth-order stencils.
    """
    nbeta = field.shape[-1]
    if field.shape[-2] < 5:
        raise ValueError("radial derivative needs at least 5 rings")
    opp = np.roll(field[..., :2, :], -nbeta // 2, axis=-1)
    ext = np.concatenate([opp[..., ::-1, :], field], axis=-2)   # rings -2, -1, 0, ...
    out = np.empty_like(field, dtype=np.result_type(field, float))
    out[..., :-2, :] = (ext[..., :-4, :] - 8 * ext[..., 1:-3, :]
                        + 8 * ext[..., 3:-1, :] - ext[..., 4:, :]) / (12 * dr)
    f = field
    out[..., -2, :] = (3 * f[..., -1, :] + 10 * f[..., -2, :] - 18 * f[..., -3, :]
                       + 6 * f[..., -4, :] - f[..., -5, :]) / (12 * dr)
    out[..., -1, :] = (25 * f[..., -1, :] - 48 * f[..., -2, :] + 36 * f[..., -3, :]
                       - 16 * f[..., -4, :] + 3 * f[..., -5, :]) / (12 * dr)
    return out


def dbar(field: np.ndarray, grid: PolarGrid) -> np.ndarray:
    """Cauchy-Riemann operator (d/dx + i d/dy)/2 on the polar grid."""
    r = grid.radii[:, None]
    e = np.exp(1j * grid.betas)[None, :]
    return 0.5 * e * (_d_r(field, grid.dr) + 1j / r * _d_beta(field, grid.nbeta))


def d(field: np.ndarray, grid: PolarGrid) -> np.ndarray:
    """Cauchy-Riemann operator (d/dx - i d/dy)/2 on the polar grid."""
    r = grid.radii[:, None]
    e = np.exp(-1j * grid.betas)[None, :]
    return 0.5 * e * (_d_r(field, grid.dr) - 1j / r * _d_beta(field, grid.nbeta))


def gradient(field: np.ndarray, grid: PolarGrid) -> np.ndarray:
    """Gradient of a real field: ``dbar psi = (psi_x + i psi_y)/2``."""
    g = dbar(np.asarray(field, dtype=complex), grid)
    return np.stack([2 * g.real, 2 * g.imag])


def divergence(F: np.ndarray, grid: PolarGrid) -> np.ndarray:
    """``div F = 4 Re d f1`` with ``f1 = (F1 + i F2)/2``."""
    return 4 * np.real(d(to_complex(F), grid))


def curl(F: np.ndarray, grid: PolarGrid) -> np.ndarray:
    return 4 * np.imag(d(to_complex(F), grid))


def to_complex(F: np.ndarray) -> np.ndarray:
    """``f1 = (F1 + i F2)/2``."""
    return 0.5 * (F[0] + 1j * F[1])


def from_complex(f1: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_complex`: ``F = (2 Re f1, 2 Im f1)``."""
    return np.stack([2 * f1.real, 2 * f1.imag])


# ---------------------------------------------------------------------------
# interpolation


def interpolate_many(field: np.ndarray, points) -> np.ndarray:
    """Bilinear (r, beta) interpolation of ``field`` at complex ``points``."""
    pts = np.atleast_1d(np.asarray(points, dtype=complex))
    if np.any(np.abs(pts) > 1 + 1e-12):
        raise OutOfDomainError("interpolation point outside the unit disk")
    px = np.ascontiguousarray(pts.real.ravel())
    py = np.ascontiguousarray(pts.imag.ravel())
    field = np.asarray(field)
    if np.iscomplexobj(field):
        re = _kernels.interp_points(np.ascontiguousarray(field.real), px, py)
        im = _kernels.interp_points(np.ascontiguousarray(field.imag), px, py)
        out = re + 1j * im
    else:
        out = _kernels.interp_points(np.ascontiguousarray(field, dtype=float), px, py)
    return out.reshape(pts.shape)


def interpolate(field: np.ndarray, point: complex):
    """Value of ``field`` at a single point of the closed disk."""
    return interpolate_many(field, [point])[0]


# ---------------------------------------------------------------------------
# CSV I/O


def write_field_csv(path, grid: PolarGrid, field: np.ndarray, header_lines=()):
    """Write a field as ``r,beta,re[,im]`` rows in (i, j) order."""
    complex_ = np.iscomplexobj(field)
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["r", "beta", "re", "im"] if complex_ else ["r", "beta", "re"])
        for i, r in enumerate(grid.radii):
            for j, b in enumerate(grid.betas):
                v = field[i, j]
                row = [repr(float(r)), repr(float(b)), repr(float(np.real(v)))]
                if complex_:
                    row.append(repr(float(np.imag(v))))
                w.writerow(row)


def read_field_csv(path) -> tuple[PolarGrid, np.ndarray]:
    """Read a field written by :func:`write_field_csv`; infers the grid."""
    rows = []
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    if header[:3] != ["r", "beta", "re"]:
        raise ValueError(f"{path}: unexpected field CSV header {header}")
    rows = np.array([[float(x) for x in row] for row in reader if row])
    radii = np.unique(rows[:, 0])
    betas = np.unique(rows[:, 1])
    grid = PolarGrid(len(radii), len(betas))
    if rows.shape[0] != grid.nr * grid.nbeta:
        raise ValueError(f"{path}: expected {grid.nr * grid.nbeta} rows, got {rows.shape[0]}")
    if not np.allclose(radii, grid.radii, atol=1e-9):
        raise ValueError(f"{path}: radii are not cell-centered on the unit disk")
    vals = rows[:, 2]
    if len(header) > 3:
        vals = vals + 1j * rows[:, 3]
    return grid, vals.reshape(grid.shape)
