"""Compiled inner loops: polar-grid interpolation and ray marching.

Fields live on a cell-centered polar grid over the unit disk, stored as
arrays of shape ``(nr, nbeta)`` with ring ``i`` at radius ``(i + 1/2)/nr`` and
spoke ``j`` at angle ``2*pi*j/nbeta``.  Angular fields are stored
direction-first, ``(ntheta, nr, nbeta)``.
"""

import math
import os

import numpy as np
from numba import config, njit, prange

# skip the TBB probe (older system TBB builds emit a warning on every run)
if "NUMBA_THREADING_LAYER" not in os.environ:
    config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

TWO_PI = 2.0 * math.pi


@njit(cache=True)
def stencil(nr, nbeta, x, y):
    """Four-corner bilinear stencil in (r, beta) for the point (x, y).

    Inside the innermost ring the value is interpolated along the diameter
    through the origin, between the innermost ring at beta and at beta + pi.
    Beyond the outermost ring the two outermost rings are extrapolated
    linearly.
    """
    dr = 1.0 / nr
    dbeta = TWO_PI / nbeta
    r = math.sqrt(x * x + y * y)
    beta = math.atan2(y, x)
    if beta < 0.0:
        beta += TWO_PI
    b = beta / dbeta
    j0 = int(math.floor(b))
    sb = b - j0
    j0 = j0 % nbeta
    j1 = (j0 + 1) % nbeta
    rho = r / dr - 0.5
    if rho < 0.0:
        # diameter through the center: ring 0 at beta and ring 0 at beta + pi
        w = 0.5 * (1.0 + r / (0.5 * dr))
        b2 = b + 0.5 * nbeta
        k0 = int(math.floor(b2))
        s2 = b2 - k0
        k0 = k0 % nbeta
        k1 = (k0 + 1) % nbeta
        return (0, 0, 0, 0, j0, j1, k0, k1,
                w * (1.0 - sb), w * sb, (1.0 - w) * (1.0 - s2), (1.0 - w) * s2)
    if nr == 1:
        return (0, 0, 0, 0, j0, j1, j0, j1, 1.0 - sb, sb, 0.0, 0.0)
    i0 = int(math.floor(rho))
    if i0 > nr - 2:
        i0 = nr - 2
    t = rho - i0
    i1 = i0 + 1
    return (i0, i0, i1, i1, j0, j1, j0, j1,
            (1.0 - t) * (1.0 - sb), (1.0 - t) * sb, t * (1.0 - sb), t * sb)


@njit(cache=True)
def _apply(F, st):
    return (st[8] * F[st[0], st[4]] + st[9] * F[st[1], st[5]]
            + st[10] * F[st[2], st[6]] + st[11] * F[st[3], st[7]])


@njit(cache=True)
def interp_points(F, px, py):
    """Interpolate the real field ``F`` at the points ``(px[k], py[k])``."""
    nr, nbeta = F.shape
    out = np.empty(px.shape[0])
    for k in range(px.shape[0]):
        st = stencil(nr, nbeta, px[k], py[k])
        out[k] = _apply(F, st)
    return out


@njit(cache=True)
def exit_length(x, y, c, s):
    """Distance from (x, y) to the unit circle along the direction (c, s)."""
    zt = x * c + y * s
    disc = 1.0 - (x * x + y * y) + zt * zt
    if disc < 0.0:
        disc = 0.0
    tau = -zt + math.sqrt(disc)
    if tau < 0.0:
        tau = 0.0
    return tau


@njit(cache=True)
def _clamp_unit(x, y):
    r2 = x * x + y * y
    if r2 > 1.0:
        r = math.sqrt(r2)
        return x / r, y / r
    return x, y


@njit(cache=True)
def ray_integrals(a, px, py, ct, st, h):
    """Forward line integrals of ``a`` from each point to the boundary.

    Returns ``(D, tau)`` with shape ``(ntheta, npoints)``; composite trapezoid
    with the largest step not exceeding ``h`` that divides the chord.
    """
    nr, nbeta = a.shape
    nth = ct.shape[0]
    npts = px.shape[0]
    D = np.zeros((nth, npts))
    T = np.zeros((nth, npts))
    for m in range(nth):
        c = ct[m]
        s = st[m]
        for k in range(npts):
            x0 = px[k]
            y0 = py[k]
            tau = exit_length(x0, y0, c, s)
            T[m, k] = tau
            if tau <= 0.0:
                continue
            n = int(math.ceil(tau / h))
            if n < 1:
                n = 1
            dt = tau / n
            acc = 0.0
            for q in range(n + 1):
                x, y = _clamp_unit(x0 + q * dt * c, y0 + q * dt * s)
                v = _apply(a, stencil(nr, nbeta, x, y))
                if q == 0 or q == n:
                    acc += 0.5 * v
                else:
                    acc += v
            D[m, k] = acc * dt
    return D, T


@njit(cache=True)
def attenuated_backprojection(a, src, px, py, ct, st, h):
    """Integrate ``src`` backwards along each ray with attenuation ``a``.

    out[m, k] = int_0^tau exp(-int_0^t a(p - t' th) dt') src_m(p - t th) dt,
    where ``p`` is point ``k``, ``th`` direction ``m`` and ``tau`` the backward
    exit length.  ``src`` has shape ``(ntheta, nr, nbeta)``.
    """
    nr, nbeta = a.shape
    nth = ct.shape[0]
    npts = px.shape[0]
    out = np.zeros((nth, npts))
    for m in range(nth):
        c = ct[m]
        s = st[m]
        S = src[m]
        for k in range(npts):
            x0 = px[k]
            y0 = py[k]
            tau = exit_length(x0, y0, -c, -s)
            if tau <= 0.0:
                continue
            n = int(math.ceil(tau / h))
            if n < 1:
                n = 1
            dt = tau / n
            att = 0.0
            a_prev = 0.0
            acc = 0.0
            for q in range(n + 1):
                x, y = _clamp_unit(x0 - q * dt * c, y0 - q * dt * s)
                stl = stencil(nr, nbeta, x, y)
                av = _apply(a, stl)
                sv = _apply(S, stl)
                if q > 0:
                    att += 0.5 * dt * (a_prev + av)
                a_prev = av
                v = math.exp(-att) * sv
                if q == 0 or q == n:
                    acc += 0.5 * v
                else:
                    acc += v
            out[m, k] = acc * dt
    return out


# ---------------------------------------------------------------------------
# precomputed ray stencils for rotation-invariant direction sets
#
# When nbeta is a multiple of ntheta, rotating the grid by one direction step
# maps nodes to nodes (a shift of q = nbeta/ntheta spokes).  Rays for every
# direction are then rotated copies of the rays for theta = 0, so stencils are
# computed once and re-indexed.


@njit(cache=True)
def _compact(nr, nbeta, x, y):
    """Compact stencil ``(ring, spoke, t, sb)``; ring -1 flags the center case."""
    dr = 1.0 / nr
    r = math.sqrt(x * x + y * y)
    beta = math.atan2(y, x)
    if beta < 0.0:
        beta += TWO_PI
    b = beta / (TWO_PI / nbeta)
    j0 = int(math.floor(b))
    sb = b - j0
    j0 = j0 % nbeta
    rho = r / dr - 0.5
    if rho < 0.0:
        return -1, j0, 0.5 * (1.0 + r / (0.5 * dr)), sb
    i0 = int(math.floor(rho))
    if i0 > nr - 2:
        i0 = nr - 2
    return i0, j0, rho - i0, sb


@njit(cache=True)
def build_bundle(nr, nbeta, sign, h):
    """Stencils for rays from every node along ``sign * (1, 0)``.

    Returns ``(start, count, dt, RI, JB, T, SB)``; rays are stored
    consecutively, node ``i*nbeta + j`` owning samples
    ``start[k] : start[k] + count[k]``.
    """
    nn = nr * nbeta
    start = np.zeros(nn, dtype=np.int64)
    count = np.zeros(nn, dtype=np.int64)
    dts = np.zeros(nn)
    xs = np.empty(nn)
    ys = np.empty(nn)
    total = 0
    for i in range(nr):
        r = (i + 0.5) / nr
        for j in range(nbeta):
            k = i * nbeta + j
            b = TWO_PI * j / nbeta
            xs[k] = r * math.cos(b)
            ys[k] = r * math.sin(b)
            tau = exit_length(xs[k], ys[k], sign, 0.0)
            start[k] = total
            if tau > 0.0:
                n = int(math.ceil(tau / h))
                if n < 1:
                    n = 1
                count[k] = n + 1
                dts[k] = tau / n
                total += n + 1
    RI = np.empty(total, dtype=np.int16)
    JB = np.empty(total, dtype=np.int32)
    T = np.empty(total)
    SB = np.empty(total)
    for k in range(nn):
        for q in range(count[k]):
            x, y = _clamp_unit(xs[k] + sign * q * dts[k], ys[k])
            p = start[k] + q
            RI[p], JB[p], T[p], SB[p] = _compact(nr, nbeta, x, y)
    return start, count, dts, RI, JB, T, SB


@njit(cache=True)
def _gather(F, ri, jb, t, sb, shift, nbeta):
    j0 = jb + shift
    if j0 >= nbeta:
        j0 -= nbeta
    j1 = j0 + 1
    if j1 >= nbeta:
        j1 -= nbeta
    if ri < 0:
        half = nbeta // 2
        k0 = j0 + half
        if k0 >= nbeta:
            k0 -= nbeta
        k1 = j1 + half
        if k1 >= nbeta:
            k1 -= nbeta
        return (t * ((1.0 - sb) * F[0, j0] + sb * F[0, j1])
                + (1.0 - t) * ((1.0 - sb) * F[0, k0] + sb * F[0, k1]))
    return ((1.0 - t) * ((1.0 - sb) * F[ri, j0] + sb * F[ri, j1])
            + t * ((1.0 - sb) * F[ri + 1, j0] + sb * F[ri + 1, j1]))


@njit(cache=True, parallel=True)
def bundle_line_integrals(a, q, start, count, dts, RI, JB, T, SB):
    """Line integrals of ``a`` along all bundle rays for all directions.

    Output shape ``(ntheta, nr, nbeta)`` with ``ntheta = nbeta // q``.
    """
    nr, nbeta = a.shape
    nth = nbeta // q
    out = np.zeros((nth, nr, nbeta))
    for m in prange(nth):
        shift = m * q
        for k in range(nr * nbeta):
            n = count[k]
            if n == 0:
                continue
            i = k // nbeta
            j = k - i * nbeta + shift
            if j >= nbeta:
                j -= nbeta
            p0 = start[k]
            acc = 0.0
            for p in range(p0, p0 + n):
                v = _gather(a, RI[p], JB[p], T[p], SB[p], shift, nbeta)
                if p == p0 or p == p0 + n - 1:
                    acc += 0.5 * v
                else:
                    acc += v
            out[m, i, j] = acc * dts[k]
    return out


@njit(cache=True, parallel=True)
def bundle_attenuated(a, src, q, start, count, dts, RI, JB, T, SB):
    """Attenuated back-integration of ``src`` (ntheta, nr, nbeta) on all nodes."""
    nr, nbeta = a.shape
    nth = src.shape[0]
    out = np.zeros((nth, nr, nbeta))
    for m in prange(nth):
        shift = m * q
        S = src[m]
        for k in range(nr * nbeta):
            n = count[k]
            if n == 0:
                continue
            i = k // nbeta
            j = k - i * nbeta + shift
            if j >= nbeta:
                j -= nbeta
            p0 = start[k]
            dt = dts[k]
            att = 0.0
            a_prev = 0.0
            acc = 0.0
            for p in range(p0, p0 + n):
                ri = RI[p]
                jb = JB[p]
                t = T[p]
                sb = SB[p]
                av = _gather(a, ri, jb, t, sb, shift, nbeta)
                sv = _gather(S, ri, jb, t, sb, shift, nbeta)
                if p > p0:
                    att += 0.5 * dt * (a_prev + av)
                a_prev = av
                v = math.exp(-att) * sv
                if p == p0 or p == p0 + n - 1:
                    acc += 0.5 * v
                else:
                    acc += v
            out[m, i, j] = acc * dt
    return out
