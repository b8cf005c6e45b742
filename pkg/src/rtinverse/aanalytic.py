"""A-analytic machinery on the unit disk.

Contents: the Radon and line Hilbert transforms used to build the function
``h = Da - (I - iH) Ra / 2``, the Fourier coefficients of ``exp(-h)`` and
``exp(h)``, the conjugation operators ``e^{-G}``/``e^{G}``, the Bukhgeim-Cauchy
operator ``B`` and the Bukhgeim-Hilbert transform on the circle.

Mode stacks store entry ``n`` = angular mode ``-n`` (see :mod:`rtinverse.grid`).
Interior stacks have shape ``(N + 1, nr, nbeta)``, boundary stacks
``(N + 1, nbeta)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.fft import idst

from .grid import DirectionGrid, PolarGrid
from .transport import divergent_beam, ray_integral


class HAccuracyError(RuntimeError):
    """exp(-h) / exp(h) carry too much negative-mode mass."""


class NearBoundaryError(ValueError):
    """Bukhgeim-Cauchy target on or outside the boundary."""


# ---------------------------------------------------------------------------
# Radon and Hilbert transforms


def radon_transform(a: np.ndarray, s: np.ndarray, theta: float,
                    h_ray: float | None = None) -> np.ndarray:
    """Line integrals ``Ra(s, theta_perp) = int a(s theta_perp + t theta) dt``.

    Chords are integrated with the composite trapezoid rule on the polar-grid
    interpolant of ``a``; values for ``|s| >= 1`` are zero.
    """
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    if not np.any(inside):
        return out
    si = s[inside]
    e = np.exp(1j * theta)
    perp = 1j * e
    entry = si * perp - np.sqrt(1 - si**2) * e
    # guard rounding just outside the circle
    entry = entry / np.maximum(1.0, np.abs(entry))
    D, _ = ray_integral(a, entry, np.array([theta]), h_ray)
    out[inside] = D[0]
    return out


def hilbert_line(samples: np.ndarray, s: np.ndarray, targets=None) -> np.ndarray:
    """Hilbert transform ``(1/pi) PV int h(t)/(x - t) dt`` of grid samples.

    ``samples`` live on the uniform grid ``s`` (support assumed inside it).
    Singularity subtraction::

        Hh(x) = (1/pi) int (h(t) - h(x))/(x - t) dt + (h(x)/pi) log|(x - a)/(x - b)|

    with the regular integral done by the trapezoid rule; at ``t = x`` the
    integrand is replaced by its limit ``-h'(x)``.
    """
    samples = np.asarray(samples)
    s = np.asarray(s, dtype=float)
    lo, hi = s[0], s[-1]
    ds = s[1] - s[0]
    x = s if targets is None else np.atleast_1d(np.asarray(targets, dtype=float))
    if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
        raise ValueError("Hilbert transform target outside the sample grid")
    if targets is None:
        hx = samples
        dh = np.gradient(samples, ds, axis=-1)
    else:
        hx = np.interp(x, s, samples)
        dh = np.interp(x, s, np.gradient(samples, ds))
    w = np.full(s.shape, ds)
    w[0] = w[-1] = 0.5 * ds
    out = np.empty(x.shape, dtype=np.result_type(samples, float))
    chunk = max(1, 2_000_000 // len(s))
    for c0 in range(0, len(x), chunk):
        xc = x[c0:c0 + chunk, None]
        diff = xc - s[None, :]
        coincide = np.abs(diff) < 1e-12 * max(1.0, abs(ds))
        safe = np.where(coincide, 1.0, diff)
        integrand = (samples[None, :] - hx[c0:c0 + chunk, None]) / safe
        integrand = np.where(coincide, -dh[c0:c0 + chunk, None], integrand)
        reg = integrand @ w
        xa = np.abs(x[c0:c0 + chunk] - lo)
        xb = np.abs(x[c0:c0 + chunk] - hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            logt = np.log(xa / xb)
        logt = np.where((xa == 0) | (xb == 0), 0.0, logt)
        out[c0:c0 + chunk] = (reg + hx[c0:c0 + chunk] * logt) / np.pi
    return out


# ---------------------------------------------------------------------------
# the h function


@dataclass
class HFunction:
    """``h(z, theta)`` on interior nodes ``(ntheta, nr, nbeta)`` and on boundary
    nodes ``(ntheta, nbeta)``."""

    interior: np.ndarray
    boundary: np.ndarray


def default_n_s(grid: PolarGrid) -> int:
    return 4 * grid.nr


def chord_nodes(n_s: int) -> np.ndarray:
    """Chebyshev nodes ``s_l = cos((l + 1/2) pi / n_s)`` used for the Radon data."""
    return np.cos((np.arange(n_s) + 0.5) * np.pi / n_s)


def radon_hilbert_coeffs(ra_nodes: np.ndarray) -> np.ndarray:
    """Coefficients ``c_k`` with ``Ra(cos phi) = sum_k c_k sin((k + 1) phi)``.

    Then ``H Ra(cos phi) = sum_k c_k cos((k + 1) phi)`` exactly, since the
    Hilbert transform maps ``sqrt(1 - t^2) U_k(t)`` to ``T_{k+1}``; this handles
    the square-root edges of ``Ra`` at ``s = +-1`` without loss of accuracy.
    """
    c = idst(np.asarray(ra_nodes, dtype=float), type=3, axis=-1)
    c[..., :-1] *= 2
    return c


def radon_minus_i_hilbert(c: np.ndarray, s: np.ndarray) -> np.ndarray:
    """``(Ra - i H Ra)(s) = -i sum_k c_k w^{k+1}`` with ``w = exp(i arccos s)``."""
    w = np.exp(1j * np.arccos(np.clip(s, -1.0, 1.0)))
    acc = np.zeros(np.shape(s), dtype=complex)
    for ck in c[::-1]:
        acc = (acc + ck) * w
    return -1j * acc


def compute_h(a: np.ndarray, grid: PolarGrid, directions: DirectionGrid,
              n_s: int | None = None, h_ray: float | None = None) -> HFunction:
    """``h(z, theta) = Da(z, theta) - (Ra - i H Ra)(z . theta_perp, theta_perp) / 2``.

    ``Ra`` is sampled at ``n_s`` Chebyshev nodes in ``s`` (default ``4 nr``) and
    expanded as in :func:`radon_hilbert_coeffs`; the ray step defaults to
    ``1/(4 nr)``.
    """
    n_s = n_s or default_n_s(grid)
    h = h_ray if h_ray is not None else 0.25 / grid.nr
    s = chord_nodes(n_s)
    Da = divergent_beam(a, grid, directions, h)
    zeta = grid.boundary.zeta
    Db, _ = ray_integral(a, zeta, directions.angles, h)

    hin = np.empty(Da.shape, dtype=complex)
    hbd = np.empty(Db.shape, dtype=complex)
    for m, th in enumerate(directions.angles):
        c = radon_hilbert_coeffs(radon_transform(a, s, th, h))
        perp = (-np.sin(th), np.cos(th))
        sz = grid.z.real * perp[0] + grid.z.imag * perp[1]
        sb = zeta.real * perp[0] + zeta.imag * perp[1]
        hin[m] = Da[m] - 0.5 * radon_minus_i_hilbert(c, sz)
        hbd[m] = Db[m] - 0.5 * radon_minus_i_hilbert(c, sb)
    return HFunction(hin, hbd)


# ---------------------------------------------------------------------------
# conjugation coefficients


@dataclass
class ConjugationCoeffs:
    """Non-negative Fourier modes of ``exp(-h)`` (alpha) and ``exp(h)`` (beta).

    ``alpha``/``beta`` have shape ``(K + 1, nr, nbeta)``; ``alpha_b``/``beta_b``
    ``(K + 1, nbeta)``.  ``negative_mass`` is the largest l1 mass of negative
    modes over all nodes and both exponentials.
    """

    alpha: np.ndarray
    beta: np.ndarray
    alpha_b: np.ndarray
    beta_b: np.ndarray
    negative_mass: float

    @property
    def K(self) -> int:
        return self.alpha.shape[0] - 1

    def interior(self, sign: int) -> np.ndarray:
        return self.alpha if sign < 0 else self.beta

    def on_boundary(self, sign: int) -> np.ndarray:
        return self.alpha_b if sign < 0 else self.beta_b


def _split_modes(field: np.ndarray, K: int) -> tuple[np.ndarray, float]:
    ntheta = field.shape[0]
    c = np.fft.fft(field, axis=0) / ntheta
    nonneg = c[:K + 1]
    neg = c[ntheta // 2 + 1:]
    mass = float(np.max(np.sum(np.abs(neg), axis=0))) if neg.size else 0.0
    return nonneg, mass


def conjugation_coeffs(h: HFunction, K: int | None = None,
                       fail_threshold: float = 1e-2) -> ConjugationCoeffs:
    """Fourier coefficients ``alpha_k``, ``beta_k`` (k = 0..K) of ``exp(-+h)``."""
    ntheta = h.interior.shape[0]
    K = ntheta // 2 - 1 if K is None else K
    if K > ntheta // 2 - 1:
        raise ValueError(f"K={K} exceeds the resolvable modes of ntheta={ntheta}")
    alpha, m1 = _split_modes(np.exp(-h.interior), K)
    beta, m2 = _split_modes(np.exp(h.interior), K)
    alpha_b, m3 = _split_modes(np.exp(-h.boundary), K)
    beta_b, m4 = _split_modes(np.exp(h.boundary), K)
    mass = max(m1, m2, m3, m4)
    if mass > fail_threshold:
        raise HAccuracyError(
            f"negative-mode mass {mass:.3g} of exp(+-h) exceeds {fail_threshold:g}; "
            "refine the Radon/Hilbert s-grid or the direction grid")
    return ConjugationCoeffs(alpha, beta, alpha_b, beta_b, mass)


def trivial_coeffs(grid: PolarGrid, K: int) -> ConjugationCoeffs:
    """Coefficients for ``a = 0`` (identity conjugation)."""
    a = np.zeros((K + 1,) + grid.shape, dtype=complex)
    a[0] = 1
    b = np.zeros((K + 1, grid.nbeta), dtype=complex)
    b[0] = 1
    return ConjugationCoeffs(a, a.copy(), b, b.copy(), 0.0)


def convolve_nonneg(alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Truncated Cauchy product ``(alpha * beta)_k = sum_{i<=k} alpha_i beta_{k-i}``."""
    K = alpha.shape[0] - 1
    out = np.zeros_like(alpha)
    for k in range(K + 1):
        for i in range(k + 1):
            out[k] += alpha[i] * beta[k - i]
    return out


def apply_eG(seq: np.ndarray, sign: int, coeffs: ConjugationCoeffs) -> np.ndarray:
    """``(e^{-G} u)_n = sum_k alpha_k u_{n-k}`` (``beta`` for ``sign = +1``).

    ``seq`` is an interior or a boundary stack; terms that fall off the end of
    the truncated stack are dropped.
    """
    seq = np.asarray(seq)
    interior = seq.ndim == 3
    c = coeffs.interior(sign) if interior else coeffs.on_boundary(sign)
    N = seq.shape[0] - 1
    out = np.zeros(seq.shape, dtype=complex)
    for p in range(N + 1):
        kmax = min(coeffs.K, N - p)
        out[p] = np.sum(c[:kmax + 1] * seq[p:p + kmax + 1], axis=0)
    return out


def shift_left(seq: np.ndarray, times: int = 1) -> np.ndarray:
    """``L^times`` on a mode stack."""
    return seq[times:]


# ---------------------------------------------------------------------------
# Bukhgeim-Cauchy operator


def _boundary_fourier(g: np.ndarray) -> np.ndarray:
    """Fourier coefficients in beta (fft ordering), Nyquist dropped."""
    nbeta = g.shape[-1]
    G = np.fft.fft(g, axis=-1) / nbeta
    G[..., nbeta // 2] = 0
    return G


def _exit_angles(r: float, phi: np.ndarray) -> np.ndarray:
    """Boundary points hit from ``z = r`` along directions ``phi``."""
    e = np.exp(1j * phi)
    zc = r * np.cos(phi)
    tau = -zc + np.sqrt(1 - r * r + zc * zc)
    return r + tau * e


@lru_cache(maxsize=8)
def _series_matrix(nr: int, nbeta: int, jmax: int, nphi: int) -> np.ndarray:
    """``E[i, k, j] = (1/pi) int zeta(phi; r_i)^k exp(-2 i j phi) dphi``.

    ``zeta(phi; r)`` is the exit point from ``r`` along ``phi``; ``k`` runs in
    fft order over ``nbeta`` frequencies and ``j = 1..jmax``.  Computed with the
    trapezoid rule in ``phi``, where the integrand is smooth for every ``r < 1``.
    """
    radii = (np.arange(nr) + 0.5) / nr
    k = np.fft.fftfreq(nbeta, d=1.0 / nbeta)
    phi = 2 * np.pi * np.arange(nphi) / nphi
    jj = np.arange(1, jmax + 1)
    wave = np.exp(-2j * np.outer(phi, jj)) * (2.0 / nphi)
    E = np.empty((nr, nbeta, jmax), dtype=complex)
    for i, r in enumerate(radii):
        beta = np.angle(_exit_angles(r, phi))
        E[i] = np.exp(1j * np.outer(k, beta)) @ wave
    return E


def default_nphi(grid: PolarGrid) -> int:
    return 8 * grid.nbeta


def bukhgeim_cauchy(g: np.ndarray, grid: PolarGrid, nphi: int | None = None) -> np.ndarray:
    """Bukhgeim-Cauchy extension of the boundary stack ``g`` to all grid nodes.

    Applied to the trigonometric interpolant of each ``g_{-n}`` in beta: the
    Cauchy term is the Szego projection evaluated at ``z`` exactly; the series
    term ``(1/pi) int g_{-n-2j}(zeta(phi)) exp(-2ij phi) dphi`` is written in
    the view angle ``phi = arg(zeta - z)`` and evaluated ring by ring through
    the rotation invariance of the grid.
    """
    g = np.asarray(g)
    P = g.shape[0] - 1
    nbeta = grid.nbeta
    if g.shape[-1] != nbeta:
        raise ValueError(f"boundary stack has {g.shape[-1]} nodes, grid has {nbeta}")
    nphi = nphi or default_nphi(grid)
    G = _boundary_fourier(g)
    k = np.fft.fftfreq(nbeta, d=1.0 / nbeta)
    pos = k >= 0
    betas = grid.betas
    jmax = P // 2
    out = np.empty((P + 1,) + grid.shape, dtype=complex)
    E = _series_matrix(grid.nr, nbeta, jmax, nphi) if jmax > 0 else None
    phase = np.exp(-2j * np.outer(np.arange(1, jmax + 1), betas)) if jmax > 0 else None
    for i, r in enumerate(grid.radii):
        rk = np.where(pos, r ** np.where(pos, k, 0), 0.0)
        out[:, i, :] = np.fft.ifft(G * rk, axis=-1) * nbeta
        if jmax == 0:
            continue
        for p in range(P + 1):
            J = (P - p) // 2
            if J == 0:
                continue
            A = G[p + 2 * np.arange(1, J + 1)] * E[i][:, :J].T  # (J, nbeta)
            series = np.fft.ifft(A, axis=-1) * nbeta
            out[p, i, :] += np.sum(series * phase[:J], axis=0)
    return out


def bukhgeim_cauchy_points(g: np.ndarray, points, nphi: int = 2048) -> np.ndarray:
    """Bukhgeim-Cauchy extension at arbitrary interior points.

    Direct quadrature in the view angle with the trigonometric interpolant of
    ``g``; slower than :func:`bukhgeim_cauchy` but independent of the grid.
    """
    g = np.asarray(g)
    P = g.shape[0] - 1
    nbeta = g.shape[-1]
    pts = np.atleast_1d(np.asarray(points, dtype=complex))
    if np.any(np.abs(pts) >= 1):
        raise NearBoundaryError("Bukhgeim-Cauchy targets must lie strictly inside the disk")
    G = _boundary_fourier(g)
    k = np.fft.fftfreq(nbeta, d=1.0 / nbeta)
    phi = 2 * np.pi * np.arange(nphi) / nphi
    out = np.zeros((P + 1, len(pts)), dtype=complex)
    for t, z in enumerate(pts):
        # Szego part: sum_{k>=0} G_k z^k
        kp = k[k >= 0].astype(int)
        out[:, t] = G[:, k >= 0] @ (z ** kp)
        e = np.exp(1j * phi)
        zc = (z.conjugate() * e).real
        tau = -zc + np.sqrt(1 - abs(z) ** 2 + zc * zc)
        zeta = z + tau * e
        vals = G @ np.exp(1j * np.outer(k, np.angle(zeta)))  # (P+1, nphi)
        for p in range(P + 1):
            for j in range(1, (P - p) // 2 + 1):
                out[p, t] += np.sum(vals[p + 2 * j] * np.exp(-2j * j * phi)) * (2.0 / nphi)
    return out


def bukhgeim_cauchy_trapezoid(g: np.ndarray, points) -> np.ndarray:
    """Literal boundary-trapezoid evaluation of the Bukhgeim-Cauchy formula.

    Accurate only for targets well away from the circle (error decays like
    ``exp(-nbeta * dist)``); kept as an independent reference.
    """
    g = np.asarray(g)
    P = g.shape[0] - 1
    nbeta = g.shape[-1]
    zeta = np.exp(2j * np.pi * np.arange(nbeta) / nbeta)
    dzeta = 1j * zeta * (2 * np.pi / nbeta)
    dzbar = np.conj(dzeta)
    pts = np.atleast_1d(np.asarray(points, dtype=complex))
    out = np.zeros((P + 1, len(pts)), dtype=complex)
    for t, z in enumerate(pts):
        w = zeta - z
        kern = dzeta / w - dzbar / np.conj(w)
        ratio = np.conj(w) / w
        for p in range(P + 1):
            acc = np.sum(g[p] * dzeta / w)
            for j in range(1, (P - p) // 2 + 1):
                acc += np.sum(kern * g[p + 2 * j] * ratio ** j)
            out[p, t] = acc / (2j * np.pi)
    return out


# ---------------------------------------------------------------------------
# Bukhgeim-Hilbert transform


def bukhgeim_hilbert(g: np.ndarray) -> np.ndarray:
    """Bukhgeim-Hilbert transform of a boundary stack ``(N + 1, nbeta)``.

    On the circle the principal-value Cauchy term is ``i sum_k s(k) g_k zeta^k``
    (``s = +1`` for ``k >= 0``, ``-1`` otherwise), and the series kernel
    reduces to ``dphi = dbeta/2`` with ``(conj(zeta - z))/(zeta - z) =
    -exp(-i(beta + beta_z))``, giving the closed form
    ``2i sum_j (-1)^j g^_{-n-2j, j} exp(-i j beta_z)``.
    """
    g = np.asarray(g)
    P = g.shape[0] - 1
    nbeta = g.shape[-1]
    G = _boundary_fourier(g)
    k = np.fft.fftfreq(nbeta, d=1.0 / nbeta)
    sgn = np.where(k >= 0, 1.0, -1.0)
    out = 1j * np.fft.ifft(G * sgn, axis=-1) * nbeta
    betas = 2 * np.pi * np.arange(nbeta) / nbeta
    for p in range(P + 1):
        for j in range(1, (P - p) // 2 + 1):
            if j >= nbeta // 2:
                break
            out[p] += 2j * (-1) ** j * G[p + 2 * j, j] * np.exp(-1j * j * betas)
    return out


def weighted_norm(g: np.ndarray) -> float:
    """Discrete ``sup_zeta sum_n <n>^2 |g_{-n}(zeta)|``."""
    n = np.arange(g.shape[0])
    w = (1 + n**2).reshape((-1,) + (1,) * (g.ndim - 1))
    return float(np.max(np.sum(w * np.abs(g), axis=0)))


def range_residual(g: np.ndarray, normalize: bool = False) -> float:
    """Weighted norm of ``(I + i H) g``; optionally relative to the norm of ``g``."""
    res = weighted_norm(g + 1j * bukhgeim_hilbert(g))
    if normalize:
        gn = weighted_norm(g)
        return res / gn if gn > 0 else 0.0
    return res
