"""Compiled inner loops (numba).  Each output element is produced by exactly one
call with a fixed summation order, so results do not depend on how the caller
splits the work across threads."""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(nogil=True, cache=True)
def wolff_atoms_block(xs, ts, py, pt, w, N, R2, RN, out, flag):
    """Entry-scale sum for spatial nodes ``xs`` (block) and all times ``ts``.

    ``out[i, k] = sum_j w_j / N * (m_ij^{-N/2} - R^{-N})`` over atoms with
    ``m_ij = max(|x_i - y_j|^2, 2 |t_k - tau_j|) < R^2``; ``flag`` marks ``m = 0``.
    """
    M = xs.shape[0]
    J = py.shape[0]
    K = ts.shape[0]
    r2 = np.empty(J)
    half = 0.5 * N
    for i in range(M):
        for j in range(J):
            acc = 0.0
            for a in range(N):
                dx = xs[i, a] - py[j, a]
                acc += dx * dx
            r2[j] = acc
        for k in range(K):
            t = ts[k]
            s = 0.0
            hit = False
            for j in range(J):
                m = 2.0 * abs(t - pt[j])
                if r2[j] > m:
                    m = r2[j]
                if m >= R2:
                    continue
                if m == 0.0:
                    if w[j] > 0.0:
                        hit = True
                    continue
                if N == 2:
                    v = 1.0 / m
                elif N == 1:
                    v = 1.0 / math.sqrt(m)
                else:
                    v = m ** (-half)
                s += w[j] * (v - RN)
            out[i, k] = s / N
            flag[i, k] = hit


@njit(nogil=True, cache=True)
def _q_time(r, u, N, R, RN):
    # int_0^u N^-1 (max(r, sqrt(2v))^-N - R^-N)_+ dv, u >= 0, r > 0
    if r >= R:
        return 0.0
    u1 = 0.5 * r * r
    u2 = 0.5 * R * R
    out = min(u, u1) * (r ** (-N) - RN) / N
    if u > u1:
        ub = min(u, u2)
        if N == 2:
            phi = 0.5 * (math.log(ub) - math.log(u1))
        else:
            e = 1.0 - 0.5 * N
            phi = ((2.0 * ub) ** e - (2.0 * u1) ** e) / (2.0 - N)
        out += (phi - RN * (ub - u1)) / N
    return out


@njit(nogil=True, cache=True)
def time_integrated_table(r, wts, cell, sig_edges, N, R, RN, out):
    """``out[c, k] += sum_p wts_p * int_{sig_k}^{sig_{k+1}} K(r_p, sigma) d sigma`` for points of cell ``c``."""
    P = r.shape[0]
    E = sig_edges.shape[0]
    prim = np.empty(E)
    for p in range(P):
        rp = r[p]
        for e in range(E):
            sg = sig_edges[e]
            if sg >= 0.0:
                prim[e] = _q_time(rp, sg, N, R, RN)
            else:
                prim[e] = -_q_time(rp, -sg, N, R, RN)
        c = cell[p]
        for e in range(E - 1):
            out[c, e] += wts[p] * (prim[e + 1] - prim[e])
