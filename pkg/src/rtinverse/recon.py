"""Source reconstruction from boundary data.

Pipelines:

* :func:`recover_solenoidal` - solenoidal part of ``F`` (``f0`` unknown);
* :func:`recover_divfree` - ``f0`` and ``F`` when ``F`` is known to be divergence free;
* :func:`recover_twodata` - ``f0`` and full ``F`` from anisotropic plus isotropic data;
* :func:`recover_F_where_f0_zero` - ``F`` on a region where ``f0`` vanishes.

All of them first recover the interior angular modes ``u_{-1}, u_{-2}, ...``
with :func:`recover_interior_modes`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aanalytic import (ConjugationCoeffs, apply_eG, bukhgeim_cauchy, compute_h,
                        conjugation_coeffs, range_residual, trivial_coeffs)
from .elliptic import cascade_residual, dbar_cascade, poisson_dirichlet
from .grid import DirectionGrid, angular_modes, d, dbar, from_complex
from .transport import BoundaryData, MediumSpec, PreconditionError


class DataConsistencyError(RuntimeError):
    """Boundary data fail the range condition."""


def boundary_modes(data: BoundaryData, N: int) -> np.ndarray:
    """Mode stack ``(N + 1, nbeta)`` of boundary data; entry ``n`` is mode ``-n``."""
    return angular_modes(data.values, N)


def add_noise(data: BoundaryData, std: float, seed: int = 0) -> BoundaryData:
    """Additive Gaussian noise with standard deviation ``std * max|g|``."""
    if std <= 0:
        return data
    rng = np.random.default_rng(seed)
    scale = std * float(np.max(np.abs(data.values)))
    return BoundaryData(data.values + scale * rng.standard_normal(data.values.shape))


def prepare_coeffs(medium: MediumSpec, directions: DirectionGrid, N: int,
                   n_s: int | None = None, fail_threshold: float = 1e-2) -> ConjugationCoeffs:
    """Conjugation coefficients of ``exp(-+h)`` for the attenuation of ``medium``."""
    K = min(N, directions.max_modes())
    if not np.any(medium.a):
        return trivial_coeffs(medium.grid, K)
    h = compute_h(medium.a, medium.grid, directions, n_s=n_s)
    return conjugation_coeffs(h, K=K, fail_threshold=fail_threshold)


@dataclass
class InteriorModes:
    """Recovered stack (entry ``n`` = mode ``-n``; entry 0 left at zero)."""

    modes: np.ndarray
    boundary: np.ndarray
    range_residual: float
    negative_mass: float
    cascade_residuals: list = field(default_factory=list)


def recover_interior_modes(data: BoundaryData, medium: MediumSpec, N: int,
                           coeffs: ConjugationCoeffs | None = None,
                           residual_fail: float = 0.5, nphi: int | None = None) -> InteriorModes:
    """Interior modes ``u_{-1} ... u_{-N}`` from boundary data.

    ``L^M u`` solves a Beltrami-type system which ``e^{-G}`` turns into an
    L2-analytic one; it is extended inside with the Bukhgeim-Cauchy operator,
    conjugated back, and the first ``M - 1`` modes are filled in by the dbar
    cascade.
    """
    grid = medium.grid
    M = medium.M
    if N < M + 2:
        raise PreconditionError(f"need N >= M + 2 modes, got N={N} with M={M}")
    directions = DirectionGrid(data.ntheta)
    if data.nbeta != grid.nbeta:
        raise PreconditionError(f"data has {data.nbeta} boundary nodes, grid has {grid.nbeta}")
    if coeffs is None:
        coeffs = prepare_coeffs(medium, directions, N)
    gm = boundary_modes(data, N)
    vb = apply_eG(gm[M:], -1, coeffs)
    resid = range_residual(vb, normalize=True)
    if resid > residual_fail:
        raise DataConsistencyError(
            f"range residual {resid:.3g} exceeds {residual_fail:g}; data are not consistent "
            "with the medium")
    v = bukhgeim_cauchy(vb, grid, nphi=nphi)
    lmu = apply_eG(v, +1, coeffs)
    modes = np.zeros((N + 1,) + grid.shape, dtype=complex)
    modes[M:] = lmu
    chain = dbar_cascade((lmu[1], lmu[0]), medium, gm)
    for step, u in enumerate(chain):
        modes[M - 1 - step] = u
    residuals = []
    for n in range(1, M):
        coef = medium.a - medium.k(n + 1)
        residuals.append(cascade_residual(modes[n], modes[n + 1], modes[n + 2], coef, grid))
    return InteriorModes(modes, gm, resid, coeffs.negative_mass, residuals)


@dataclass
class ReconResult:
    """Output of a reconstruction pipeline.

    ``modes`` holds ``u_0`` (or ``u_0 - phi`` for the solenoidal pipeline) in
    entry 0 followed by ``u_{-1}, u_{-2}, ...``.  ``F`` is the solenoidal part
    or the full field depending on the pipeline.
    """

    variant: str
    modes: np.ndarray
    F: np.ndarray
    f0: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


def _diagnostics(im: InteriorModes) -> dict:
    out = {"range_residual": im.range_residual, "negative_mode_mass": im.negative_mass}
    for n, r in enumerate(im.cascade_residuals, start=1):
        out[f"cascade_residual_mode_-{n}"] = r
    return out


def _zero_mode_poisson(modes: np.ndarray, medium: MediumSpec, g0: np.ndarray) -> np.ndarray:
    grid = medium.grid
    coef = medium.a - medium.k(1)
    rhs = -4 * np.real(d(d(modes[2], grid), grid) + d(coef * modes[1], grid))
    return poisson_dirichlet(rhs, np.real(g0), grid)


def _f1(u0: np.ndarray, modes: np.ndarray, medium: MediumSpec) -> np.ndarray:
    grid = medium.grid
    return dbar(u0, grid) + d(modes[2], grid) + (medium.a - medium.k(1)) * modes[1]


def recover_solenoidal(data: BoundaryData, medium: MediumSpec, N: int,
                       coeffs: ConjugationCoeffs | None = None, **kw) -> ReconResult:
    """Solenoidal part ``Fs`` of the vector source; ``u_0 - phi`` in entry 0."""
    im = recover_interior_modes(data, medium, N, coeffs, **kw)
    w = _zero_mode_poisson(im.modes, medium, im.boundary[0])
    modes = im.modes.copy()
    modes[0] = w
    Fs = from_complex(_f1(w, modes, medium))
    return ReconResult("solenoidal", modes, Fs, None, _diagnostics(im))


def recover_divfree(data: BoundaryData, medium: MediumSpec, N: int,
                    coeffs: ConjugationCoeffs | None = None, **kw) -> ReconResult:
    """``f0`` and ``F`` for a source whose vector part is divergence free."""
    res = recover_solenoidal(data, medium, N, coeffs, **kw)
    grid = medium.grid
    u0 = np.real(res.modes[0])
    f0 = 2 * np.real(d(res.modes[1], grid)) + medium.sigma_a * u0
    return ReconResult("divfree", res.modes, res.F, f0, res.diagnostics)


def _require_subcritical(medium: MediumSpec, delta: float):
    return medium.check_subcritical(delta)


def _vector_from_mode_one(modes: np.ndarray, medium: MediumSpec) -> tuple[np.ndarray, np.ndarray]:
    grid = medium.grid
    w0 = -2 * np.real(d(modes[1], grid)) / medium.sigma_a
    return w0, _f1(w0, modes, medium)


def recover_twodata(g_full: BoundaryData, g_iso: BoundaryData, medium: MediumSpec, N: int,
                    coeffs: ConjugationCoeffs | None = None, delta: float = 1e-8,
                    **kw) -> ReconResult:
    """``f0`` and the full ``F`` from data of ``f0 + theta.F`` and of ``f0`` alone."""
    _require_subcritical(medium, delta)
    if coeffs is None:
        coeffs = prepare_coeffs(medium, DirectionGrid(g_full.ntheta), N)
    grid = medium.grid
    iso = recover_interior_modes(g_iso, medium, N, coeffs, **kw)
    v0 = _zero_mode_poisson(iso.modes, medium, iso.boundary[0])
    f0 = 2 * np.real(d(iso.modes[1], grid)) + medium.sigma_a * v0

    aniso = recover_interior_modes(g_full - g_iso, medium, N, coeffs, **kw)
    w0, f1 = _vector_from_mode_one(aniso.modes, medium)
    modes = iso.modes + aniso.modes
    modes[0] = v0 + w0
    diag = {f"iso_{k}": v for k, v in _diagnostics(iso).items()}
    diag.update({f"aniso_{k}": v for k, v in _diagnostics(aniso).items()})
    return ReconResult("twodata", modes, from_complex(f1), f0, diag)


def recover_F_where_f0_zero(data: BoundaryData, medium: MediumSpec, N: int, mask: np.ndarray,
                            coeffs: ConjugationCoeffs | None = None, delta: float = 1e-8,
                            **kw) -> ReconResult:
    """Vector source on ``mask``, a region where ``f0`` is known to vanish.

    Values off the mask are set to NaN.
    """
    _require_subcritical(medium, delta)
    grid = medium.grid
    mask = np.asarray(mask, dtype=bool)
    F = np.full((2,) + grid.shape, np.nan)
    if not mask.any():
        return ReconResult("remark", np.zeros((N + 1,) + grid.shape, dtype=complex), F, None, {})
    im = recover_interior_modes(data, medium, N, coeffs, **kw)
    u0, f1 = _vector_from_mode_one(im.modes, medium)
    modes = im.modes.copy()
    modes[0] = u0
    full = from_complex(f1)
    F[:, mask] = full[:, mask]
    return ReconResult("remark", modes, F, None, _diagnostics(im))


# ---------------------------------------------------------------------------
# error metrics


def relative_l2(estimate: np.ndarray, truth: np.ndarray, grid, mask=None) -> float:
    """Relative L2 error over the disk (vector fields: all components together)."""
    est = np.asarray(estimate)
    tru = np.asarray(truth)
    w = grid.area_weights
    if mask is not None:
        w = w * np.asarray(mask, dtype=float)
        est = np.where(np.broadcast_to(mask, est.shape), est, 0.0)
    num = np.sqrt(np.sum(np.abs(est - tru) ** 2 * w))
    den = np.sqrt(np.sum(np.abs(tru) ** 2 * w))
    return float(num / den) if den > 0 else float(num)


def error_metrics(result: ReconResult, grid, f0_true=None, F_true=None, mask=None) -> dict:
    """Relative L2 errors of the recovered fields, per component and combined."""
    out = {}
    if F_true is not None:
        out["F_rel_l2"] = relative_l2(result.F, F_true, grid, mask)
        out["F1_rel_l2"] = relative_l2(result.F[0], F_true[0], grid, mask)
        out["F2_rel_l2"] = relative_l2(result.F[1], F_true[1], grid, mask)
    if f0_true is not None and result.f0 is not None:
        out["f0_rel_l2"] = relative_l2(result.f0, f0_true, grid, mask)
    return out
