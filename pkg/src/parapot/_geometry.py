"""Overlap volumes between axis-aligned boxes and Euclidean balls.

Exact formulas are used for N = 1 (interval overlap) and N = 2 (disc/rectangle
area via a signed corner function).  For N >= 3 boxes are clipped by recursive
subdivision; partially covered leaves use a linear ramp along the ball normal.
"""

from __future__ import annotations

import numpy as np


def interval_overlap(lo, hi, a, b):
    """Length of [lo, hi] intersected with [a, b] (vectorized)."""
    return np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0.0, None)


def _corner_area(x, y, r):
    # area of disc(0, r) intersected with the signed rectangle spanned by 0 and (x, y)
    sx = np.sign(x)
    sy = np.sign(y)
    x = np.minimum(np.abs(x), r)
    y = np.minimum(np.abs(y), r)
    inside = x * x + y * y <= r * r
    ustar = np.sqrt(np.clip(r * r - y * y, 0.0, None))
    ustar = np.minimum(ustar, x)

    def prim(u):
        return 0.5 * (u * np.sqrt(np.clip(r * r - u * u, 0.0, None))
                      + r * r * np.arcsin(np.clip(u / r, -1.0, 1.0)))

    partial = y * ustar + prim(x) - prim(ustar)
    return sx * sy * np.where(inside, x * y, partial)


def _box_distances(lo, hi, center):
    near = np.clip(center, lo, hi) - center
    far = np.maximum(np.abs(lo - center), np.abs(hi - center))
    return np.sqrt(np.sum(near * near, axis=-1)), np.sqrt(np.sum(far * far, axis=-1))


def box_ball_overlap(lo, hi, center, s, depth=4):
    """Volume of each box ``[lo_i, hi_i]`` inside the closed ball ``B_s(center)``.

    Parameters
    ----------
    lo, hi : ndarray, shape (M, N)
        Box corners.
    center : ndarray, shape (N,)
    s : float
        Ball radius.
    depth : int
        Subdivision depth used for N >= 3.
    """
    lo = np.atleast_2d(np.asarray(lo, dtype=float))
    hi = np.atleast_2d(np.asarray(hi, dtype=float))
    center = np.asarray(center, dtype=float)
    n = lo.shape[1]
    out = np.zeros(lo.shape[0])
    if s <= 0 or lo.shape[0] == 0:
        return out
    dnear, dfar = _box_distances(lo, hi, center)
    full = dfar <= s
    out[full] = np.prod(hi[full] - lo[full], axis=1)
    part = (~full) & (dnear < s)
    if not np.any(part):
        return out
    plo = lo[part] - center
    phi = hi[part] - center
    if n == 1:
        out[part] = interval_overlap(plo[:, 0], phi[:, 0], -s, s)
    elif n == 2:
        x0, y0 = plo[:, 0], plo[:, 1]
        x1, y1 = phi[:, 0], phi[:, 1]
        area = (_corner_area(x1, y1, s) - _corner_area(x0, y1, s)
                - _corner_area(x1, y0, s) + _corner_area(x0, y0, s))
        out[part] = np.clip(area, 0.0, None)
    else:
        out[part] = _subdivide(plo, phi, s, depth)
    return out


def _subdivide(lo, hi, s, depth):
    n = lo.shape[1]
    owner = np.arange(lo.shape[0])
    acc = np.zeros(lo.shape[0])
    offsets = np.array(np.meshgrid(*([[0, 1]] * n), indexing="ij")).reshape(n, -1).T
    zero = np.zeros(n)
    for level in range(depth + 1):
        dnear, dfar = _box_distances(lo, hi, zero)
        vol = np.prod(hi - lo, axis=1)
        full = dfar <= s
        np.add.at(acc, owner[full], vol[full])
        part = (~full) & (dnear < s)
        lo, hi, owner, vol = lo[part], hi[part], owner[part], vol[part]
        if lo.shape[0] == 0:
            return acc
        if level == depth:
            c = 0.5 * (lo + hi)
            dist = np.linalg.norm(c, axis=1)
            normal = c / np.where(dist > 0, dist, 1.0)[:, None]
            width = np.sum(np.abs(normal) * (hi - lo), axis=1)
            frac = np.clip(0.5 + (s - dist) / np.where(width > 0, width, 1.0), 0.0, 1.0)
            np.add.at(acc, owner, frac * vol)
            return acc
        half = 0.5 * (hi - lo)
        new_lo = (lo[:, None, :] + offsets[None, :, :] * half[:, None, :]).reshape(-1, n)
        new_hi = new_lo + np.repeat(half, len(offsets), axis=0)
        owner = np.repeat(owner, len(offsets))
        lo, hi = new_lo, new_hi
    return acc


def ball_volume(n, s=1.0):
    from scipy.special import gamma

    return np.pi ** (n / 2) / gamma(n / 2 + 1) * s ** n
