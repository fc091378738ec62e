"""Compiled kernels for the P0 single layer operator on polygons.

Notation: segment k runs from a_k to b_k with length L_k, unit tangent t_k
and left normal n_k = (-t_k.y, t_k.x).  For a point x,

    G_k(x)      = int_{T_k} log|x - y| ds(y)
                = (L - p) log r_b + p log r_a - L + q theta
    grad G_k(x) = log(r_a / r_b) t_k + theta n_k

with p, q the tangential/normal coordinates of x - a_k, r_a = |x - a_k|,
r_b = |x - b_k| and theta the signed angle subtended by the segment.
"""
from __future__ import annotations

import math
import os

import numba
import numpy as np
from numba import prange

# the TBB layer shipped with some installs is too old and warns on first use
if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER = "omp"

TWO_PI = 2.0 * math.pi
LOG_EPS = 16.1  # ln(1e-14) / -2: Gauss order so that rho^(-2n) <= 1e-14
MAX_TENSOR = 8


@numba.njit(cache=True, inline="always")
def _seg_gap(ax, ay, bx, by, cx, cy, dx, dy):
    """Distance between two non-intersecting segments ab and cd."""
    best = math.inf
    for k in range(4):
        if k == 0:
            px, py, ux, uy, vx, vy = ax, ay, cx, cy, dx, dy
        elif k == 1:
            px, py, ux, uy, vx, vy = bx, by, cx, cy, dx, dy
        elif k == 2:
            px, py, ux, uy, vx, vy = cx, cy, ax, ay, bx, by
        else:
            px, py, ux, uy, vx, vy = dx, dy, ax, ay, bx, by
        ex, ey = vx - ux, vy - uy
        ll = ex * ex + ey * ey
        t = ((px - ux) * ex + (py - uy) * ey) / ll
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        rx, ry = px - (ux + t * ex), py - (uy + t * ey)
        d = math.sqrt(rx * rx + ry * ry)
        if d < best:
            best = d
    return best


@numba.njit(cache=True, inline="always")
def gauss_order(gap, length):
    """Order n with Bernstein-ellipse rho^(-2n) <= 1e-14, or 99 if unbounded."""
    if gap <= 0.0:
        return 99
    d = 2.0 * gap / length
    rho = 1.0 + d + math.sqrt(d * d + 2.0 * d)
    n = int(math.ceil(LOG_EPS / math.log(rho)))
    return max(n, 1)


@numba.njit(cache=True, inline="always")
def seg_potential_rel(ax, ay, bx, by, L, tx, ty):
    """G_k(x) with a, b given relative to x (a = a_k - x, b = b_k - x)."""
    # p, q coordinates of x - a_k
    p = -(ax * tx + ay * ty)
    q = -(-ax * ty + ay * tx)
    ra = math.sqrt(ax * ax + ay * ay)
    rb = math.sqrt(bx * bx + by * by)
    th = math.atan2(ax * by - ay * bx, ax * bx + ay * by)
    val = -L + q * th
    if L - p != 0.0:
        val += (L - p) * math.log(rb)
    if p != 0.0:
        val += p * math.log(ra)
    return val


@numba.njit(cache=True)
def _h(z):
    if z == 0:
        return 0.0 + 0.0j
    return 0.5 * z * z * np.log(z) - 0.75 * z * z


@numba.njit(cache=True)
def shared_vertex_integral(e1x, e1y, L1, e2x, e2y, L2):
    """int_0^L1 int_0^L2 log|s e1 - t e2| dt ds for unit e1, e2 from a common vertex."""
    c = e1x * e2x + e1y * e2y
    sig = abs(e1x * e2y - e1y * e2x)
    w = complex(-c, sig)
    val = (_h(L2 + L1 * w) - _h(L1 * w) - _h(complex(L2, 0.0))) / w
    return val.real


@numba.njit(cache=True)
def self_integral(L):
    return L * L * (math.log(L) - 1.5)


@numba.njit(cache=True)
def pair_integral(j, k, n, ax, ay, bx, by, L, tx, ty, gnodes, gweights):
    """int_{T_j} int_{T_k} log|x - y|."""
    if j > k:
        # fixed evaluation order: V[j, k] and V[k, j] are bit-identical
        j, k = k, j
    if j == k:
        return self_integral(L[j])
    if k == (j + 1) % n:
        # common vertex b_j = a_k
        return shared_vertex_integral(-tx[j], -ty[j], L[j], tx[k], ty[k], L[k])
    if j == (k + 1) % n:
        return shared_vertex_integral(tx[j], ty[j], L[j], -tx[k], -ty[k], L[k])
    gap = _seg_gap(ax[j], ay[j], bx[j], by[j], ax[k], ay[k], bx[k], by[k])
    nq = gauss_order(gap, max(L[j], L[k]))
    if nq <= MAX_TENSOR:
        acc = 0.0
        for u in range(nq):
            xx = ax[j] + gnodes[nq, u] * L[j] * tx[j]
            xy = ay[j] + gnodes[nq, u] * L[j] * ty[j]
            inner = 0.0
            for v in range(nq):
                dx = xx - (ax[k] + gnodes[nq, v] * L[k] * tx[k])
                dy = xy - (ay[k] + gnodes[nq, v] * L[k] * ty[k])
                inner += gweights[nq, v] * 0.5 * math.log(dx * dx + dy * dy)
            acc += gweights[nq, u] * inner
        return acc * L[j] * L[k]
    # near pair: analytic inner integral over the longer segment,
    # 16-point Gauss on pieces of the shorter one no longer than the gap
    if L[j] <= L[k]:
        o, i = j, k
    else:
        o, i = k, j
    pieces = int(math.ceil(L[o] / gap))
    if pieces > 256:
        pieces = 256
    h = L[o] / pieces
    acc = 0.0
    for m in range(pieces):
        for u in range(16):
            s = (m + gnodes[16, u]) * h
            x0 = ax[o] + s * tx[o]
            y0 = ay[o] + s * ty[o]
            acc += gweights[16, u] * seg_potential_rel(ax[i] - x0, ay[i] - y0, bx[i] - x0,
                                                       by[i] - y0, L[i], tx[i], ty[i])
    return acc * h


@numba.njit(cache=True, parallel=True)
def assemble_rows(ax, ay, bx, by, L, tx, ty, rows, is_row, V, gnodes, gweights):
    """Fill V[j, :] and V[:, j] for j in rows (kernel -1/(2 pi) log)."""
    n = L.size
    for r in prange(rows.size):
        j = rows[r]
        for k in range(n):
            if is_row[k] and k < j:
                continue
            val = -pair_integral(j, k, n, ax, ay, bx, by, L, tx, ty, gnodes, gweights) / TWO_PI
            V[j, k] = val
            V[k, j] = val


@numba.njit(cache=True, inline="always")
def _grad_closed(ax, ay, bx, by, tkx, tky):
    """grad G_k(x) with endpoints relative to x.

    A point on an endpoint is moved 1e-14 |T_k| away from it (principal
    value guard); the log singularity there is integrable.
    """
    ra = math.sqrt(ax * ax + ay * ay)
    rb = math.sqrt(bx * bx + by * by)
    if ra == 0.0 or rb == 0.0:
        floor = 1e-14 * math.sqrt((bx - ax) ** 2 + (by - ay) ** 2)
        ra = max(ra, floor)
        rb = max(rb, floor)
    th = math.atan2(ax * by - ay * bx, ax * bx + ay * by)
    lg = math.log(ra / rb)
    return lg * tkx - th * tky, lg * tky + th * tkx


@numba.njit(cache=True, parallel=True)
def tangential_residual_sq(ax, ay, bx, by, L, tx, ty, phi, fine_s, fine_w, coarse16, coarse6,
                           P16, P6, gnodes, gweights, dfine, scale):
    """Per segment  L_j * int_{T_j} (d_t f - d_t V phi)^2 ds.

    d_t f at the fine nodes is passed in ``dfine`` (n, 2 * len(fine_s));
    the fine nodes are fine_s measured from a_j, then fine_s measured
    from b_j.  ``scale`` multiplies the operator part (-1/(2 pi)).
    """
    n = L.size
    nf = fine_s.size
    out = np.zeros(n)
    for j in prange(n):
        Lj = L[j]
        tjx, tjy = tx[j], ty[j]
        acc_f = np.zeros(2 * nf)
        acc16 = np.zeros(coarse16.size)
        acc6 = np.zeros(coarse6.size)
        used16 = False
        used6 = False
        for k in range(n):
            if phi[k] == 0.0:
                continue
            adjacent = k == j or k == (j + 1) % n or j == (k + 1) % n
            gap = 0.0
            if not adjacent:
                gap = _seg_gap(ax[j], ay[j], bx[j], by[j], ax[k], ay[k], bx[k], by[k])
            if adjacent or gap < 2.0 * Lj:
                # closed form at every fine node, relative to the anchor endpoint
                for half in range(2):
                    if half == 0:
                        cx, cy, sg = ax[j], ay[j], 1.0
                    else:
                        cx, cy, sg = bx[j], by[j], -1.0
                    rax0, ray0 = ax[k] - cx, ay[k] - cy
                    rbx0, rby0 = bx[k] - cx, by[k] - cy
                    for i in range(nf):
                        ox = sg * fine_s[i] * Lj * tjx
                        oy = sg * fine_s[i] * Lj * tjy
                        rax, ray = rax0 - ox, ray0 - oy
                        rbx, rby = rbx0 - ox, rby0 - oy
                        if (rax == 0.0 and ray == 0.0) or (rbx == 0.0 and rby == 0.0):
                            # principal value guard
                            sh = 1e-14 * Lj
                            rax -= sh * tjx
                            ray -= sh * tjy
                            rbx -= sh * tjx
                            rby -= sh * tjy
                        if k == j:
                            ra = math.sqrt(rax * rax + ray * ray)
                            rb = math.sqrt(rbx * rbx + rby * rby)
                            d = math.log(ra / rb)
                        else:
                            gx, gy = _grad_closed(rax, ray, rbx, rby, tx[k], ty[k])
                            d = gx * tjx + gy * tjy
                        acc_f[half * nf + i] += phi[k] * d
                continue
            use16 = gap < 100.0 * Lj
            if use16:
                nodes = coarse16
                used16 = True
            else:
                nodes = coarse6
                used6 = True
            nq = gauss_order(gap, L[k])
            for i in range(nodes.size):
                x0 = ax[j] + nodes[i] * Lj * tjx
                y0 = ay[j] + nodes[i] * Lj * tjy
                if nq > MAX_TENSOR:
                    gx, gy = _grad_closed(ax[k] - x0, ay[k] - y0, bx[k] - x0, by[k] - y0,
                                          tx[k], ty[k])
                else:
                    gx = 0.0
                    gy = 0.0
                    for v in range(nq):
                        yx = ax[k] + gnodes[nq, v] * L[k] * tx[k]
                        yy = ay[k] + gnodes[nq, v] * L[k] * ty[k]
                        dx, dy = x0 - yx, y0 - yy
                        r2 = dx * dx + dy * dy
                        gx += gweights[nq, v] * dx / r2
                        gy += gweights[nq, v] * dy / r2
                    gx *= L[k]
                    gy *= L[k]
                d = gx * tjx + gy * tjy
                if use16:
                    acc16[i] += phi[k] * d
                else:
                    acc6[i] += phi[k] * d
        if used16:
            acc_f += P16 @ acc16
        if used6:
            acc_f += P6 @ acc6
        total = 0.0
        for i in range(2 * nf):
            r = dfine[j, i] - scale * acc_f[i]
            total += fine_w[i % nf] * r * r
        out[j] = Lj * Lj * total
    return out


@numba.njit(cache=True, parallel=True)
def potential_at(px, py, ax, ay, bx, by, L, tx, ty, phi):
    """sum_k phi_k G_k(x) at arbitrary points (closed form)."""
    out = np.zeros(px.size)
    for i in prange(px.size):
        acc = 0.0
        for k in range(L.size):
            acc += phi[k] * seg_potential_rel(ax[k] - px[i], ay[k] - py[i], bx[k] - px[i],
                                              by[k] - py[i], L[k], tx[k], ty[k])
        out[i] = acc
    return out


@numba.njit(cache=True, parallel=True)
def gradient_at(px, py, ax, ay, bx, by, tx, ty, phi):
    """sum_k phi_k grad G_k(x) at arbitrary points (closed form)."""
    gx = np.zeros(px.size)
    gy = np.zeros(px.size)
    for i in prange(px.size):
        sx = 0.0
        sy = 0.0
        for k in range(ax.size):
            u, v = _grad_closed(ax[k] - px[i], ay[k] - py[i], bx[k] - px[i], by[k] - py[i],
                                tx[k], ty[k])
            sx += phi[k] * u
            sy += phi[k] * v
        gx[i] = sx
        gy[i] = sy
    return gx, gy
