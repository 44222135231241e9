"""numba kernels for the crossing game.

Tables are handled as 5D arrays ``(p_x, p_y, v, p_y_opp, b)``; belief-less
tables carry a size-1 trailing axis. Every node is computed independently
from the previous buffer, so results do not depend on the thread count.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np


@nb.njit(cache=True, inline="always")
def _locate(x, lo, step, n):
    if n == 1:
        return 0, 0.0
    s = (x - lo) / step
    if s <= 0.0:
        return 0, 0.0
    if s >= n - 1:
        return n - 2, 1.0
    i = int(math.floor(s))
    if i > n - 2:
        i = n - 2
    return i, s - i


def locate_many(x, lo, step, n):
    """Vectorized ``_locate``: lower node index and fraction, with clamping."""
    x = np.asarray(x, dtype=np.float64)
    if n == 1:
        return np.zeros(x.shape, np.int64), np.zeros(x.shape)
    s = np.clip((x - lo) / step, 0.0, n - 1)
    i = np.minimum(np.floor(s).astype(np.int64), n - 2)
    return i, s - i


@nb.njit(cache=True, inline="always")
def _failure(px, py, po, xc, yc, hw, r):
    d = math.sqrt((px - xc) * (px - xc) + (py - po) * (py - po)) - r
    road = hw - abs(py - yc)
    return d if d < road else road


@nb.njit(cache=True, nogil=True)
def interp_point(V, mins, steps, x):
    """Multilinear interpolation of a 5D array at one point, clamped."""
    n0, n1, n2, n3, n4 = V.shape
    i0, t0 = _locate(x[0], mins[0], steps[0], n0)
    i1, t1 = _locate(x[1], mins[1], steps[1], n1)
    i2, t2 = _locate(x[2], mins[2], steps[2], n2)
    i3, t3 = _locate(x[3], mins[3], steps[3], n3)
    i4, t4 = _locate(x[4], mins[4], steps[4], n4)
    acc = 0.0
    for c0 in range(2):
        w0 = t0 if c0 else 1.0 - t0
        if w0 == 0.0:
            continue
        for c1 in range(2):
            w1 = w0 * (t1 if c1 else 1.0 - t1)
            if w1 == 0.0:
                continue
            for c2 in range(2):
                w2 = w1 * (t2 if c2 else 1.0 - t2)
                if w2 == 0.0:
                    continue
                for c3 in range(2):
                    w3 = w2 * (t3 if c3 else 1.0 - t3)
                    if w3 == 0.0:
                        continue
                    for c4 in range(2):
                        w4 = w3 * (t4 if c4 else 1.0 - t4)
                        if w4 == 0.0:
                            continue
                        acc += w4 * V[i0 + c0, i1 + c1, i2 + c2, i3 + c3, i4 + c4]
    return acc


@nb.njit(cache=True, nogil=True)
def q_matrix(V, mins, steps, x, a_vals, l_vals, u_vals, bnext, w_vals, dt, vmin, vmax,
             xc, yc, hw, r, tx, clip):
    """Successor values ``Q[ego, opp]`` at one state, minimized over noise.

    ``x`` holds ``(p_x, p_y, v, p_y_opp, b)``; ``bnext[k, j]`` is the updated
    belief after opponent control ``k`` observed with noise ``j``.
    """
    na, nl, nk, nj, nw = a_vals.size, l_vals.size, u_vals.size, bnext.shape[1], w_vals.size
    Q = np.empty((na * nl, nk))
    nxt = np.empty(5)
    px2 = x[0] + x[2] * dt
    for ia in range(na):
        for il in range(nl):
            py2 = x[1] + l_vals[il] * dt
            for k in range(nk):
                po2 = x[3] + u_vals[k] * dt
                g2 = _failure(px2, py2, po2, xc, yc, hw, r)
                worst = np.inf
                for iw in range(nw):
                    v2 = x[2] + a_vals[ia] * dt + w_vals[iw]
                    v2 = min(max(v2, vmin), vmax)
                    for j in range(nj):
                        nxt[0] = px2
                        nxt[1] = py2
                        nxt[2] = v2
                        nxt[3] = po2
                        nxt[4] = bnext[k, j]
                        val = interp_point(V, mins, steps, nxt)
                        if clip:
                            val = max(px2 - tx, val)
                            val = min(g2, val)
                        if val < worst:
                            worst = val
                Q[ia * nl + il, k] = worst
    return Q


@nb.njit(cache=True, parallel=True)
def opp_stage(V, po_lo, po_t, b_lo, b_t, out):
    """Interpolate along the opponent and belief axes for every opponent
    control/observation-noise combination ``c``; ``out[i0, i1, i2, i3, c, i4]``.

    ``po_lo/po_t`` have shape ``(C, n3)``; ``b_lo/b_t`` have shape ``(C, n4)``.
    """
    C = out.shape[4]
    n0, n1, n2, n3, n4 = V.shape
    for i0 in nb.prange(n0):
        for i1 in range(n1):
            for i2 in range(n2):
                for i3 in range(n3):
                    for c in range(C):
                        j3 = po_lo[c, i3]
                        s3 = po_t[c, i3]
                        for i4 in range(n4):
                            if n4 == 1:
                                out[i0, i1, i2, i3, c, i4] = (1.0 - s3) * V[i0, i1, i2, j3, 0] + s3 * V[i0, i1, i2, j3 + 1, 0]
                            else:
                                j4 = b_lo[c, i4]
                                s4 = b_t[c, i4]
                                out[i0, i1, i2, i3, c, i4] = (
                                    (1.0 - s3) * ((1.0 - s4) * V[i0, i1, i2, j3, j4] + s4 * V[i0, i1, i2, j3, j4 + 1])
                                    + s3 * ((1.0 - s4) * V[i0, i1, i2, j3 + 1, j4] + s4 * V[i0, i1, i2, j3 + 1, j4 + 1])
                                )


@nb.njit(cache=True)
def _ego_row(i0, A, V, out, g0, l0, allowed, px_lo, px_t, px_next, py_lo, py_t, py_next,
             v_lo, v_t, v_span, po_next, xc, yc, hw, r, tx, gamma, clip):
    C = A.shape[4]
    n0, n1, n2, n3, n4 = V.shape
    nl = py_lo.shape[1]
    na = v_lo.shape[1]
    nw = v_lo.shape[2]
    worst = np.empty((n4, na))
    best = np.empty(n4)
    B = np.empty((n2, n4))
    rmax = 0.0
    gp = 0.0
    lrow = l0[i0]
    for i1 in range(n1):
        for i2 in range(n2):
            j0 = px_lo[i0, i2]
            s0 = px_t[i0, i2]
            px2 = px_next[i0, i2]
            lp = px2 - tx
            jv0 = v_span[i2, 0]
            jv1 = v_span[i2, 1]
            for i3 in range(n3):
                g = g0[i0, i1, i3]
                if g <= lrow:
                    # min(g, max(l, .)) is pinned to g
                    for i4 in range(n4):
                        out[i0, i1, i2, i3, i4] = g
                        d = abs(g - V[i0, i1, i2, i3, i4])
                        if d > rmax:
                            rmax = d
                    continue
                for i4 in range(n4):
                    best[i4] = -np.inf
                for il in range(nl):
                    j1 = py_lo[i1, il]
                    s1 = py_t[i1, il]
                    py2 = py_next[i1, il]
                    for i4 in range(n4):
                        for ia in range(na):
                            worst[i4, ia] = np.inf
                    for c in range(C):
                        if clip:
                            # the successor margin does not depend on the belief
                            gp = _failure(px2, py2, po_next[c, i3], xc, yc, hw, r)
                        for jv in range(jv0, jv1 + 1):
                            for i4 in range(n4):
                                B[jv, i4] = (1.0 - s0) * ((1.0 - s1) * A[j0, j1, jv, i3, c, i4] + s1 * A[j0, j1 + 1, jv, i3, c, i4]) \
                                    + s0 * ((1.0 - s1) * A[j0 + 1, j1, jv, i3, c, i4] + s1 * A[j0 + 1, j1 + 1, jv, i3, c, i4])
                        for i4 in range(n4):
                            if not allowed[c, i4]:
                                continue
                            for ia in range(na):
                                for iw in range(nw):
                                    j2 = v_lo[i2, ia, iw]
                                    s2 = v_t[i2, ia, iw]
                                    val = (1.0 - s2) * B[j2, i4] + s2 * B[j2 + 1, i4]
                                    if clip:
                                        val = min(gp, max(lp, val))
                                    if val < worst[i4, ia]:
                                        worst[i4, ia] = val
                    for i4 in range(n4):
                        for ia in range(na):
                            if worst[i4, ia] > best[i4]:
                                best[i4] = worst[i4, ia]
                for i4 in range(n4):
                    new = min(g, max(lrow, gamma * best[i4]))
                    out[i0, i1, i2, i3, i4] = new
                    d = abs(new - V[i0, i1, i2, i3, i4])
                    if d > rmax:
                        rmax = d
    return rmax


@nb.njit(cache=True, parallel=True)
def ego_stage(A, V, out, g0, l0, allowed,
              px_lo, px_t, px_next, py_lo, py_t, py_next, v_lo, v_t, v_span,
              po_next, xc, yc, hw, r, tx, gamma, clip):
    """One Jacobi sweep given the opponent-stage array ``A`` with axes
    ``(p_x, p_y, v, p_y_opp, combination, b)``.

    Returns the sup-norm change between ``V`` and ``out``.
    Index arrays: ``px_*[i0, i2]``, ``py_*[i1, il]``, ``v_*[i2, ia, iw]``,
    ``v_span[i2]`` (lowest and highest v node read), ``po_next[c, i3]``;
    ``allowed[c, i4]`` masks opponent controls per belief node.
    """
    n0 = V.shape[0]
    resid = np.zeros(n0)
    for i0 in nb.prange(n0):
        resid[i0] = _ego_row(i0, A, V, out, g0, l0, allowed, px_lo, px_t, px_next, py_lo, py_t, py_next,
                             v_lo, v_t, v_span, po_next, xc, yc, hw, r, tx, gamma, clip)
    return resid.max()
