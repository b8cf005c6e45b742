"""Forward solver for stationary transport with a polynomial scattering kernel.

The boundary value problem

    theta . grad u + a u - K u = f0 + theta . F   in the disk,
    u = 0 on incoming boundary pairs,

is solved through the fixed point ``u = T^{-1}(f + K u)``, where ``T^{-1}``
integrates backwards along characteristics with attenuation ``a`` and ``K``
multiplies angular modes ``n`` by the kernel coefficient ``k_{-|n|}``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels
from .grid import DirectionGrid, OutOfDomainError, PolarGrid, to_complex

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Source iteration failed to converge (scattering too strong)."""


class PreconditionError(ValueError):
    """Input violates a documented precondition."""


class SubcriticalityError(PreconditionError):
    """``a - k0`` is not bounded below by a positive constant."""


@dataclass
class MediumSpec:
    """Attenuation ``a`` and kernel coefficients ``[k0, k_-1, ..., k_-M]``."""

    grid: PolarGrid
    a: np.ndarray
    kcoef: list = field(default_factory=list)

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        if not self.kcoef:
            self.kcoef = [np.zeros(self.grid.shape), np.zeros(self.grid.shape)]
        self.kcoef = [np.broadcast_to(np.asarray(k, dtype=float), self.grid.shape).copy()
                      for k in self.kcoef]
        if len(self.kcoef) == 1:
            self.kcoef.append(np.zeros(self.grid.shape))
        if self.a.shape != self.grid.shape:
            raise ValueError(f"attenuation shape {self.a.shape} != grid {self.grid.shape}")

    @property
    def M(self) -> int:
        return len(self.kcoef) - 1

    def k(self, n: int) -> np.ndarray:
        """Kernel coefficient ``k_{-|n|}``; zero beyond the kernel degree."""
        n = abs(n)
        if n <= self.M:
            return self.kcoef[n]
        return np.zeros(self.grid.shape)

    @property
    def sigma_a(self) -> np.ndarray:
        return self.a - self.kcoef[0]

    @property
    def scattering(self) -> bool:
        return any(np.any(k != 0) for k in self.kcoef)

    def check_subcritical(self, delta: float = 1e-8) -> float:
        """Return ``min(a - k0)``; raise if it is below ``delta``."""
        smin = float(self.sigma_a.min())
        if smin < delta:
            raise SubcriticalityError(
                f"medium is not subcritical: min(a - k0) = {smin:.3g} < {delta:g}")
        return smin


@dataclass
class SourceSpec:
    """Linearly anisotropic source ``f0 + theta . F``."""

    grid: PolarGrid
    f0: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        self.f0 = np.asarray(self.f0, dtype=float)
        self.F = np.asarray(self.F, dtype=float)
        if self.F.shape != (2,) + self.grid.shape:
            raise ValueError(f"vector field shape {self.F.shape} != (2,)+{self.grid.shape}")

    @property
    def f1(self) -> np.ndarray:
        return to_complex(self.F)

    def angular(self, directions: DirectionGrid) -> np.ndarray:
        """Sample ``f(z, theta_m)`` as an angular field."""
        c = directions.cos[:, None, None]
        s = directions.sin[:, None, None]
        return self.f0[None] + c * self.F[0][None] + s * self.F[1][None]

    @classmethod
    def zero(cls, grid: PolarGrid) -> "SourceSpec":
        return cls(grid, np.zeros(grid.shape), np.zeros((2,) + grid.shape))


@dataclass
class BoundaryData:
    """Exiting radiation ``g(zeta_j, theta_m)``, shape ``(ntheta, nbeta)``.

    Entries at incoming pairs (``nu . theta < 0``) are exactly zero.
    """

    values: np.ndarray

    @property
    def ntheta(self) -> int:
        return self.values.shape[0]

    @property
    def nbeta(self) -> int:
        return self.values.shape[1]

    def __sub__(self, other: "BoundaryData") -> "BoundaryData":
        return BoundaryData(self.values - other.values)

    def scaled(self, c: float) -> "BoundaryData":
        return BoundaryData(c * self.values)

    def write_csv(self, path, header_lines=()):
        betas = 2 * np.pi * np.arange(self.nbeta) / self.nbeta
        thetas = 2 * np.pi * np.arange(self.ntheta) / self.ntheta
        with open(path, "w") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write("beta,theta,value\n")
            for j, b in enumerate(betas):
                for m, t in enumerate(thetas):
                    fh.write(f"{float(b)!r},{float(t)!r},{float(self.values[m, j])!r}\n")

    @classmethod
    def read_csv(cls, path) -> "BoundaryData":
        with open(path) as fh:
            lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
        if lines[0].strip() != "beta,theta,value":
            raise ValueError(f"{path}: expected header 'beta,theta,value'")
        rows = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
        nbeta = len(np.unique(rows[:, 0]))
        ntheta = len(np.unique(rows[:, 1]))
        if rows.shape[0] != nbeta * ntheta:
            raise ValueError(f"{path}: {rows.shape[0]} rows do not form a full grid")
        return cls(rows[:, 2].reshape(nbeta, ntheta).T.copy())


def default_h_ray(grid: PolarGrid) -> float:
    return 0.5 / grid.nr


def _points(z) -> tuple[np.ndarray, np.ndarray]:
    z = np.atleast_1d(np.asarray(z, dtype=complex)).ravel()
    if np.any(np.abs(z) > 1 + 1e-12):
        raise OutOfDomainError("ray start point outside the unit disk")
    return np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag)


def ray_integral(a: np.ndarray, z, theta, h_ray: float | None = None):
    """Divergent beam transform ``Da(z, theta)`` and exit length ``tau``.

    ``z`` is a complex point (or array of points), ``theta`` an angle (or array
    of angles).  Output arrays have shape ``(len(theta), len(z))`` unless both
    inputs are scalars.
    """
    scalar = np.ndim(z) == 0 and np.ndim(theta) == 0
    px, py = _points(z)
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    h = h_ray if h_ray is not None else 0.5 / a.shape[0]
    D, T = _kernels.ray_integrals(np.ascontiguousarray(a, dtype=float), px, py,
                                  np.cos(th), np.sin(th), h)
    if scalar:
        return float(D[0, 0]), float(T[0, 0])
    return D, T


def apply_T1inv_at(src: np.ndarray, medium: MediumSpec, directions: DirectionGrid,
                   z, h_ray: float | None = None) -> np.ndarray:
    """Attenuated back-integration of the angular field ``src`` at points ``z``.

    Returns shape ``(ntheta, len(z))``.
    """
    px, py = _points(z)
    h = h_ray if h_ray is not None else default_h_ray(medium.grid)
    return _kernels.attenuated_backprojection(
        medium.a, np.ascontiguousarray(src, dtype=float), px, py,
        directions.cos, directions.sin, h)


@lru_cache(maxsize=4)
def ray_bundle(nr: int, nbeta: int, sign: float, h: float):
    """Cached direction-0 ray stencils from every node (see ``_kernels``)."""
    return _kernels.build_bundle(nr, nbeta, sign, h)


def _rotation_step(grid: PolarGrid, directions: DirectionGrid) -> int | None:
    if grid.nbeta % directions.ntheta == 0:
        return grid.nbeta // directions.ntheta
    return None


def apply_T1inv(src: np.ndarray, medium: MediumSpec, directions: DirectionGrid,
                h_ray: float | None = None) -> np.ndarray:
    """``T^{-1}`` on an angular field; output on the grid nodes."""
    grid = medium.grid
    h = h_ray if h_ray is not None else default_h_ray(grid)
    q = _rotation_step(grid, directions)
    if q is None:
        out = apply_T1inv_at(src, medium, directions, grid.z, h)
        return out.reshape((directions.ntheta,) + grid.shape)
    bundle = ray_bundle(grid.nr, grid.nbeta, -1.0, h)
    return _kernels.bundle_attenuated(medium.a, np.ascontiguousarray(src, dtype=float),
                                      q, *bundle)


def divergent_beam(a: np.ndarray, grid: PolarGrid, directions: DirectionGrid,
                   h_ray: float | None = None) -> np.ndarray:
    """``Da(z, theta_m)`` at every grid node, shape ``(ntheta, nr, nbeta)``."""
    h = h_ray if h_ray is not None else default_h_ray(grid)
    q = _rotation_step(grid, directions)
    if q is None:
        D, _ = ray_integral(a, grid.z, directions.angles, h)
        return D.reshape((directions.ntheta,) + grid.shape)
    bundle = ray_bundle(grid.nr, grid.nbeta, 1.0, h)
    return _kernels.bundle_line_integrals(np.ascontiguousarray(a, dtype=float), q, *bundle)


def apply_K(u: np.ndarray, medium: MediumSpec) -> np.ndarray:
    """Scattering operator by mode multiplication: ``(Ku)_n = k_{-|n|} u_n``."""
    ntheta = u.shape[0]
    if medium.M >= ntheta // 2:
        raise ValueError(f"kernel degree {medium.M} not resolved by ntheta={ntheta}")
    c = np.fft.rfft(u, axis=0) / ntheta
    out = np.zeros_like(c)
    for n in range(medium.M + 1):
        out[n] = medium.kcoef[n] * c[n]
    return np.fft.irfft(out * ntheta, n=ntheta, axis=0)


@dataclass
class ForwardResult:
    u: np.ndarray
    iterations: int
    updates: list

    @property
    def converged_update(self) -> float:
        return self.updates[-1] if self.updates else 0.0


def solve_forward(medium: MediumSpec, source: SourceSpec, directions: DirectionGrid,
                  tol: float = 1e-10, max_iter: int = 200,
                  h_ray: float | None = None) -> ForwardResult:
    """Source iteration ``u <- T^{-1} f + T^{-1} K u`` from ``u = 0``.

    Stops when the sup-norm update relative to the first iterate drops below
    ``tol``.  A kernel that is identically zero takes exactly one iteration.
    """
    if medium.M >= directions.ntheta // 2:
        raise ValueError(f"kernel degree {medium.M} not resolved by ntheta={directions.ntheta}")
    f = source.angular(directions)
    base = apply_T1inv(f, medium, directions, h_ray)
    u = base
    updates: list = []
    if not medium.scattering:
        return ForwardResult(u, 1, updates)
    scale = float(np.max(np.abs(base)))
    if scale == 0.0:
        return ForwardResult(u, 1, updates)
    for it in range(2, max_iter + 1):
        u_new = base + apply_T1inv(apply_K(u, medium), medium, directions, h_ray)
        upd = float(np.max(np.abs(u_new - u))) / scale
        updates.append(upd)
        u = u_new
        log.debug("source iteration %d: relative update %.3e", it, upd)
        if not np.isfinite(upd) or upd > 1e6:
            break
        if upd < tol:
            return ForwardResult(u, it, updates)
    raise DivergenceError(
        f"source iteration did not converge in {max_iter} iterations "
        f"(last relative update {updates[-1]:.3e})")


def extract_boundary_data(u: np.ndarray, directions: DirectionGrid | None = None) -> BoundaryData:
    """Outgoing trace by linear extrapolation of the two outermost rings.

    Entries with ``nu . theta <= 0`` are set to zero.
    """
    ntheta, nr, nbeta = u.shape
    directions = directions or DirectionGrid(ntheta)
    trace = 1.5 * u[:, -1, :] - 0.5 * u[:, -2, :]
    betas = 2 * np.pi * np.arange(nbeta) / nbeta
    cosang = np.cos(directions.angles[:, None] - betas[None, :])
    return BoundaryData(np.where(cosang > 1e-12, trace, 0.0))


def mass_balance(u: np.ndarray, data: BoundaryData, medium: MediumSpec,
                 source: SourceSpec) -> dict:
    """Boundary outflow versus interior production.

    Integrating the transport equation over disk x circle (normalized angular
    measure) gives ``oint sum_m (nu.theta_m) g / ntheta = iint (f0 - sigma_a u0)``.
    """
    grid = medium.grid
    ntheta, nbeta = data.values.shape
    betas = 2 * np.pi * np.arange(nbeta) / nbeta
    angles = 2 * np.pi * np.arange(ntheta) / ntheta
    cosang = np.cos(angles[:, None] - betas[None, :])
    flux = float(np.sum(cosang * data.values) / ntheta * (2 * np.pi / nbeta))
    u0 = u.mean(axis=0)
    volume = float(grid.integrate(source.f0 - medium.sigma_a * u0))
    rel = abs(flux - volume) / max(abs(volume), 1e-300)
    return {"boundary_flux": flux, "volume_source": volume, "relative_error": rel}
