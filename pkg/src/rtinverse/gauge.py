"""Gauge-equivalent sources: pairs ``(f0, F)`` and ``(f0~, F~)`` with identical data.

If ``psi = (f0 - f0~)/sigma_a`` vanishes on the circle then
``F = F~ + grad psi`` gives the same exiting radiation as ``(f0~, F~)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import DirectionGrid, gradient
from .transport import (BoundaryData, MediumSpec, PreconditionError, SourceSpec,
                        extract_boundary_data, solve_forward)


@dataclass
class GaugePair:
    first: SourceSpec
    second: SourceSpec
    psi: np.ndarray


def boundary_trace(field: np.ndarray) -> np.ndarray:
    """Linear extrapolation of a grid field to ``r = 1``."""
    return 1.5 * field[-1] - 0.5 * field[-2]


def gauge_potential(f0: np.ndarray, f0_tilde: np.ndarray, medium: MediumSpec,
                    tol: float = 1e-4) -> np.ndarray:
    """``psi = (f0 - f0~)/sigma_a`` after checking the preconditions."""
    sig = medium.sigma_a
    if float(sig.min()) <= 0:
        raise PreconditionError(f"sigma_a must be positive, min is {float(sig.min()):.3g}")
    psi = (np.asarray(f0) - np.asarray(f0_tilde)) / sig
    edge = float(np.max(np.abs(boundary_trace(psi))))
    scale = max(1.0, float(np.max(np.abs(psi))))
    if edge > tol * scale:
        raise PreconditionError(
            f"(f0 - f0_tilde)/sigma_a does not vanish on the boundary (max trace {edge:.3g})")
    return psi


def gauge_partner(f0, f0_tilde, F_tilde, medium: MediumSpec, tol: float = 1e-4) -> np.ndarray:
    """Vector source ``F = F~ + grad((f0 - f0~)/sigma_a)``."""
    psi = gauge_potential(f0, f0_tilde, medium, tol)
    return np.asarray(F_tilde) + gradient(psi, medium.grid)


def make_pair(f0, f0_tilde, F_tilde, medium: MediumSpec, tol: float = 1e-4) -> GaugePair:
    grid = medium.grid
    psi = gauge_potential(f0, f0_tilde, medium, tol)
    F = np.asarray(F_tilde) + gradient(psi, grid)
    return GaugePair(SourceSpec(grid, f0, F), SourceSpec(grid, f0_tilde, F_tilde), psi)


def _data_norms(g: BoundaryData) -> tuple[float, float]:
    v = g.values
    return float(np.max(np.abs(v))), float(np.sqrt(np.mean(v**2)))


def converse_residual(first: SourceSpec, second: SourceSpec, medium: MediumSpec) -> float:
    """Relative L2 size of ``F - F~ - grad((f0 - f0~)/sigma_a)``."""
    grid = medium.grid
    psi = (first.f0 - second.f0) / medium.sigma_a
    r = first.F - second.F - gradient(psi, grid)
    scale = grid.l2_norm(np.hypot(first.F[0], first.F[1]))
    num = grid.l2_norm(np.hypot(r[0], r[1]))
    return num / scale if scale > 0 else num


def gauge_verify(first: SourceSpec, second: SourceSpec, medium: MediumSpec,
                 directions: DirectionGrid, tol: float = 1e-10, max_iter: int = 200,
                 perturbation: np.ndarray | None = None, h_ray: float | None = None) -> dict:
    """Compare the boundary data of two sources.

    With ``perturbation`` (a vector field) a third forward solve with
    ``F + perturbation`` measures how much the data move under a change that
    is not a gauge transformation.
    """
    solves = {}

    def data(src):
        key = id(src)
        if key not in solves:
            u = solve_forward(medium, src, directions, tol=tol, max_iter=max_iter, h_ray=h_ray).u
            solves[key] = extract_boundary_data(u, directions)
        return solves[key]

    gA = data(first)
    gB = gA if second is first else data(second)
    diff = gA.values - gB.values
    supA, l2A = _data_norms(gA)
    supB, l2B = _data_norms(gB)
    report = {
        "data_sup_first": supA,
        "data_sup_second": supB,
        "data_rms_first": l2A,
        "data_rms_second": l2B,
        "discrepancy_sup": float(np.max(np.abs(diff))),
        "discrepancy_rms": float(np.sqrt(np.mean(diff**2))),
        "relative_discrepancy_sup": float(np.max(np.abs(diff))) / supA if supA > 0 else 0.0,
        "converse_residual": converse_residual(first, second, medium),
    }
    if perturbation is not None:
        pert = SourceSpec(medium.grid, first.f0, first.F + perturbation)
        gP = data(pert)
        dp = gP.values - gA.values
        report["perturbation_change_sup"] = float(np.max(np.abs(dp)))
        report["perturbation_change_rms"] = float(np.sqrt(np.mean(dp**2)))
        report["discrepancy_to_perturbation"] = (
            report["discrepancy_sup"] / report["perturbation_change_sup"]
            if report["perturbation_change_sup"] > 0 else float("inf"))
    report["_data"] = (gA, gB)
    return report
