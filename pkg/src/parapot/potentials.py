"""Maximal and Wolff potentials of nonnegative measures.

For a nonnegative space-time measure ``mu`` and ``0 < R <= inf``::

    W_R[mu](x, t) = int_0^R mu(Q_s(x, t)) s^{-N-1} ds
    M2[mu](x, t)  = sup_{0 < s <= R} mu(Q_s(x, t)) / (s^N h2(s))

and for a spatial measure ``omega``::

    M1[omega](x)  = sup_{0 < s <= R} omega(B_s(x)) / (s^N h1(s)).

An atom at ``(y, tau)`` enters ``Q_s(x, t)`` at the scale
``max(|x - y|, sqrt(2 |t - tau|))``, which gives the atomic Wolff potential in
closed form.  Infinite values are reported through an explicit flag.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from ._geometry import box_ball_overlap, interval_overlap
from .constants import omega_N
from .grids import CellGrid, SpaceTimeGrid, remap_mass
from .measures import (CellDensity, ParabolicCylinder, SpaceTimeMeasure, SpatialMeasure, ball_mass,
                       cylinder_mass)


class QuadratureError(RuntimeError):
    """Raised when the scale quadrature fails its node-doubling check."""


@dataclass(frozen=True)
class PotentialParams:
    """Exponents, truncation radius and quadrature controls.

    ``per_decade`` sets the number of log-spaced panels per decade of ``s`` in
    the Wolff quadrature and ``sup_per_decade`` the coarse grid of the
    supremum search; ``s_min = s_min_factor * d``.
    """

    alpha: float = 1.0
    beta: float = 0.0
    R: float = math.inf
    d: float = 1.0
    per_decade: int = 64
    sup_per_decade: int = 16
    s_min_factor: float = 1e-6
    rtol: float = 1e-8
    max_order: int = 64
    refine_rounds: int = 3
    blowup: float = 1e12

    def __post_init__(self):
        if not (self.alpha >= 1):
            raise ValueError("alpha must be >= 1")
        if not (0 <= self.beta < 1):
            raise ValueError("beta must lie in [0, 1)")
        if not (self.R > 0):
            raise ValueError("R must be > 0 (or inf)")
        if not (self.d > 0):
            raise ValueError("d must be > 0")
        if not (self.s_min_factor > 0):
            raise ValueError("s_min must be > 0")

    @property
    def s_min(self):
        return self.s_min_factor * self.d

    def with_(self, **kw):
        d = dict(self.__dict__)
        d.update(kw)
        return PotentialParams(**d)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "R" in d and (d["R"] is None or d["R"] in ("inf", "infinity")):
            d["R"] = math.inf
        return cls(**d)


@dataclass(frozen=True)
class PointValue:
    value: float
    infinite: bool = False

    def __float__(self):
        return math.inf if self.infinite else float(self.value)


ZERO = PointValue(0.0)
INF = PointValue(math.inf, True)


# --------------------------------------------------------------------------- weights

def h1(s, alpha):
    """``(-ln min(s, 1/2))^{1/alpha}``."""
    s = np.asarray(s, float)
    out = (-np.log(np.minimum(s, 0.5))) ** (1.0 / alpha)
    return out if out.ndim else float(out)


def h2(s, beta, d):
    """``(ln max(2d/s, 2))^{-beta}``."""
    s = np.asarray(s, float)
    out = np.log(np.maximum(2.0 * d / s, 2.0)) ** (-beta)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------- helpers

def _require_nonnegative(m):
    if not m.is_nonnegative():
        raise ValueError("potentials are defined for nonnegative measures; pass the positive or negative part")


def _support_extent_spatial(omega: SpatialMeasure, x):
    """Radius beyond which ``B_s(x)`` contains all of ``omega``; and distance to the support."""
    far, near = 0.0, math.inf
    if omega.has_atoms:
        r = omega.entry_scales(x)
        far, near = max(far, float(r.max())), min(near, float(r.min()))
    if omega.density is not None and np.any(omega.density.values):
        lo, hi = _nonzero_bbox(omega.density)
        far = max(far, _far_corner(x, lo, hi))
        near = min(near, _near_dist(x, lo, hi))
    return far, near


def _nonzero_bbox(dens: CellDensity):
    g = dens.grid
    idx = np.nonzero(dens.values)
    lo = np.array([g.edges(a)[idx[a].min()] for a in range(g.ndim)])
    hi = np.array([g.edges(a)[idx[a].max() + 1] for a in range(g.ndim)])
    return lo, hi


def _far_corner(x, lo, hi):
    x = np.asarray(x, float)
    far = np.maximum(np.abs(lo - x), np.abs(hi - x))
    return float(np.sqrt(np.sum(far * far)))


def _near_dist(x, lo, hi):
    x = np.asarray(x, float)
    near = np.clip(x, lo, hi) - x
    return float(np.sqrt(np.sum(near * near)))


def _time_scale(dt):
    return math.sqrt(2.0 * max(dt, 0.0))


def _support_extent_spacetime(mu: SpaceTimeMeasure, x, t):
    far, near = 0.0, math.inf
    if mu.has_atoms:
        s = mu.entry_scales(x, t)
        far, near = max(far, float(s.max())), min(near, float(s.min()))
    if mu.density is not None and np.any(mu.density.values):
        lo, hi = _nonzero_bbox(mu.density)
        tf = max(abs(lo[-1] - t), abs(hi[-1] - t))
        far = max(far, _far_corner(x, lo[:-1], hi[:-1]), _time_scale(tf))
        tn = max(lo[-1] - t, t - hi[-1], 0.0)
        near = min(near, max(_near_dist(x, lo[:-1], hi[:-1]), _time_scale(tn)))
    if mu.tensor is not None:
        lam, theta = mu.tensor
        nz = np.nonzero(theta.values)[0]
        if len(nz) and not lam.is_zero:
            t0, t1 = theta.edges[nz.min()], theta.edges[nz.max() + 1]
            lf, ln = _support_extent_spatial(lam, x)
            far = max(far, lf, _time_scale(max(abs(t0 - t), abs(t1 - t))))
            near = min(near, max(ln, _time_scale(max(t0 - t, t - t1, 0.0))))
    return far, near


def _log_grid(a, b, per_decade):
    if b <= a:
        return np.array([b])
    n = max(int(math.ceil(per_decade * math.log10(b / a))), 1)
    return np.geomspace(a, b, n + 1)


# --------------------------------------------------------------------------- suprema

def _sup_search(mass_closed, mass_open, denom, candidates, s_lo, s_hi, p, smooth):
    """Supremum of ``mass(s) / denom(s)`` over ``(0, s_hi]``.

    ``candidates`` are scales where the (right-continuous) mass jumps; both the
    closed value and the left limit are tried there.  ``smooth`` enables the
    coarse log grid plus local refinement used for continuous mass parts.
    """
    best, best_s = 0.0, None
    for c in candidates:
        if 0 < c <= s_hi:
            dn = denom(c)
            for m in (mass_closed(c), mass_open(c)):
                v = m / dn
                if v > best:
                    best, best_s = v, c
    if smooth:
        grid = _log_grid(s_lo, s_hi, p.sup_per_decade)
        vals = np.array([mass_closed(s) / denom(s) for s in grid])
        # divergence heuristic: very large at the floor and still growing toward it
        per = max(p.sup_per_decade, 1)
        if len(vals) > per and vals[0] > p.blowup and vals[0] > vals[per]:
            return INF
        k = int(np.argmax(vals))
        if vals[k] > best:
            best, best_s = float(vals[k]), float(grid[k])
        lo = grid[max(k - 1, 0)]
        hi = grid[min(k + 1, len(grid) - 1)]
        for _ in range(p.refine_rounds):
            if hi <= lo:
                break
            sub = np.geomspace(lo, hi, 9)
            sv = np.array([mass_closed(s) / denom(s) for s in sub])
            j = int(np.argmax(sv))
            if sv[j] > best:
                best, best_s = float(sv[j]), float(sub[j])
            lo, hi = sub[max(j - 1, 0)], sub[min(j + 1, len(sub) - 1)]
        # golden-section polish inside the final bracket
        best = max(best, _golden_max(lambda s: mass_closed(s) / denom(s), lo, hi))
    return PointValue(best)


def _golden_max(f, a, b, iters=40):
    if b <= a:
        return f(b)
    g = (math.sqrt(5) - 1) / 2
    la, lb = math.log(a), math.log(b)
    c, d = lb - g * (lb - la), la + g * (lb - la)
    fc, fd = f(math.exp(c)), f(math.exp(d))
    best = max(fc, fd)
    for _ in range(iters):
        if fc > fd:
            lb, d, fd = d, c, fc
            c = lb - g * (lb - la)
            fc = f(math.exp(c))
        else:
            la, c, fc = c, d, fd
            d = la + g * (lb - la)
            fd = f(math.exp(d))
        best = max(best, fc, fd)
    return best


def max1(omega: SpatialMeasure, x, p: PotentialParams) -> PointValue:
    """``sup_{0<s<=R} omega(B_s(x)) / (s^N h1(s))`` for nonnegative ``omega``."""
    _require_nonnegative(omega)
    if omega.is_zero:
        return ZERO
    x = np.atleast_1d(np.asarray(x, float))
    N = omega.N
    r = omega.entry_scales(x) if omega.has_atoms else np.zeros(0)
    if np.any((r == 0) & (omega.weights > 0)):
        return INF
    far, _ = _support_extent_spatial(omega, x)
    s_hi = min(p.R, max(far, p.s_min))

    def closed(s):
        return ball_mass(omega, x, s)

    def open_(s):
        return closed(s) - float(np.sum(omega.weights[r == s])) if len(r) else closed(s)

    def denom(s):
        return s ** N * h1(s, p.alpha)

    cands = list(r) + [0.5, s_hi]
    return _sup_search(closed, open_, denom, cands, p.s_min, s_hi, p, omega.density is not None)


def max2(mu: SpaceTimeMeasure, x, t, p: PotentialParams) -> PointValue:
    """``sup_{0<s<=R} mu(Q_s(x,t)) / (s^N h2(s))`` for nonnegative ``mu``."""
    _require_nonnegative(mu)
    if mu.is_zero:
        return ZERO
    x = np.atleast_1d(np.asarray(x, float))
    N = mu.N
    s_atoms = mu.entry_scales(x, t) if mu.has_atoms else np.zeros(0)
    if np.any((s_atoms == 0) & (mu.weights > 0)):
        return INF
    far, _ = _support_extent_spacetime(mu, x, t)
    s_hi = min(p.R, max(far, p.s_min))
    cands = list(s_atoms) + [s_hi]
    smooth = mu.density is not None
    if mu.tensor is not None:
        lam, theta = mu.tensor
        if lam.has_atoms:
            # lam-atoms contribute jumps at their distances; theta is continuous in s
            cands += list(lam.entry_scales(x))
        smooth = True

    def closed(s):
        return cylinder_mass(mu, ParabolicCylinder(x, t, s))

    def open_(s):
        m = closed(s)
        if len(s_atoms):
            m -= float(np.sum(mu.weights[s_atoms == s]))
        if mu.tensor is not None and mu.tensor[0].has_atoms:
            lam, theta = mu.tensor
            rr = lam.entry_scales(x)
            hit = rr == s
            if np.any(hit):
                m -= float(np.sum(lam.weights[hit])) * theta.integral(t - 0.5 * s * s, t + 0.5 * s * s)
        return m

    def denom(s):
        return s ** N * h2(s, p.beta, p.d)

    return _sup_search(closed, open_, denom, cands, p.s_min, s_hi, p, smooth)


# --------------------------------------------------------------------------- Wolff

def wolff_atomic(mu: SpaceTimeMeasure, x, t, R) -> PointValue:
    """Closed-form ``W_R`` of a nonnegative atomic measure."""
    if not mu.is_atomic:
        raise ValueError("wolff_atomic needs an atoms-only measure")
    _require_nonnegative(mu)
    return _wolff_atoms(mu.N, mu.points, mu.times, mu.weights, x, t, R)


def _wolff_atoms(N, pts, times, w, x, t, R):
    if len(w) == 0:
        return ZERO
    s = np.linalg.norm(pts - np.asarray(x, float), axis=1)
    s = np.maximum(s, np.sqrt(2.0 * np.abs(times - t)))
    if np.any((s == 0) & (w > 0)):
        return INF
    RN = 0.0 if math.isinf(R) else R ** (-N)
    inside = s < R
    with np.errstate(divide="ignore"):
        terms = w[inside] * (s[inside] ** (-N) - RN) / N
    return PointValue(float(np.sum(terms)))


def _tensor_atom_wolff(N, lam: SpatialMeasure, theta, x, t, R):
    """Exact ``W_R`` of ``(sum_j w_j delta_{y_j}) x theta``.

    Between consecutive breakpoints the time mass ``Theta(s)`` captured by the
    window ``[t - s^2/2, t + s^2/2]`` is affine in ``u = s^2/2``, so each piece
    integrates in closed form against ``s^{-N-1}``.
    """
    if not lam.has_atoms:
        return ZERO
    e = theta.edges
    bps = np.sqrt(2.0 * np.abs(e - t))
    total = 0.0
    for y, w in zip(lam.points, lam.weights):
        r = float(np.linalg.norm(np.asarray(x, float) - y))
        if r >= R:
            continue
        if r == 0.0:
            # Theta(s) ~ theta(t) s^2: integrable only for N = 1
            dens_here = _step_value_near(theta, t)
            if dens_here > 0 and N >= 2 and w > 0:
                return INF
        knots = np.unique(np.concatenate([[r], bps[(bps > r) & (bps < R)]]))
        upper = R if not math.isinf(R) else None
        segs = list(zip(knots[:-1], knots[1:]))
        last = knots[-1]
        for a, b in segs:
            total += w * _affine_piece(N, theta, t, a, b)
        if upper is not None:
            if upper > last:
                total += w * _affine_piece(N, theta, t, last, upper)
        else:
            # beyond the last breakpoint Theta is constant (all of theta captured)
            if last > 0:
                total += w * theta.integral() * last ** (-N) / N
            elif N == 1:
                total += math.inf
    return PointValue(total)


def _step_value_near(theta, t):
    i = np.searchsorted(theta.edges, t, side="right") - 1
    vals = []
    for j in (i - 1, i):
        if 0 <= j < len(theta.values):
            vals.append(theta.values[j])
    return max(vals) if vals else 0.0


def _affine_piece(N, theta, t, a, b):
    """``int_a^b Theta(s) s^{-N-1} ds`` when Theta is affine in ``s^2/2`` on [a, b]."""
    if b <= a:
        return 0.0
    ua, ub = 0.5 * a * a, 0.5 * b * b
    th = lambda u: theta.integral(t - u, t + u)
    if ua > 0:
        A_a, A_b = th(ua), th(ub)
        slope = (A_b - A_a) / (ub - ua)
        c0 = A_a - slope * ua
    else:
        um = 0.5 * ub
        slope = (th(ub) - th(um)) / (ub - um)
        c0 = th(ub) - slope * ub
    # Theta = c0 + slope * s^2 / 2
    part0 = c0 * _int_pow(a, b, -N - 1)
    part1 = 0.5 * slope * _int_pow(a, b, 1 - N)
    return part0 + part1


def _int_pow(a, b, k):
    if k == -1:
        return math.log(b / a) if a > 0 else math.inf
    if a == 0 and k < -1:
        return math.inf
    return (b ** (k + 1) - a ** (k + 1)) / (k + 1)


def _gauss_legendre(order):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def _panel_integral(f, knots, order):
    """Gauss-Legendre in ``log s`` on each panel of ``knots``: int f(s) ds."""
    x, w = _gauss_legendre(order)
    la, lb = np.log(knots[:-1]), np.log(knots[1:])
    mid, half = 0.5 * (la + lb), 0.5 * (lb - la)
    total = 0.0
    for m, h in zip(mid, half):
        s = np.exp(m + h * x)
        total += h * float(np.sum(w * s * np.array([f(si) for si in s])))
    return total


def _local_cell_scale(mu: SpaceTimeMeasure, x, t):
    """Largest ``s`` such that every smooth part is a single constant on ``Q_s(x, t)``."""
    x = np.asarray(x, float)
    s = math.inf
    if mu.density is not None:
        g = mu.density.grid
        for a in range(g.ndim):
            c = x[a] if a < len(x) else t
            e = g.edges(a)
            if c <= e[0] or c >= e[-1]:
                gap = max(e[0] - c, c - e[-1])
            else:
                i = np.searchsorted(e, c)
                gap = min(c - e[i - 1], e[i] - c) if e[i] != c else 0.0
            s = min(s, gap if a < len(x) else _time_scale(gap))
    if mu.tensor is not None:
        lam, theta = mu.tensor
        if lam.density is not None:
            g = lam.density.grid
            for a in range(g.ndim):
                e = g.edges(a)
                c = x[a]
                if c <= e[0] or c >= e[-1]:
                    gap = max(e[0] - c, c - e[-1])
                else:
                    i = np.searchsorted(e, c)
                    gap = min(c - e[i - 1], e[i] - c) if e[i] != c else 0.0
                s = min(s, gap)
            gap_t = float(np.min(np.abs(theta.edges - t)))
            s = min(s, _time_scale(gap_t))
    return s


def _kink_scales(mu: SpaceTimeMeasure, x, t):
    """Scales where ``s -> mu(Q_s(x,t))`` loses smoothness: the ball meets a cell
    face or corner, or the time window meets a cell edge."""
    out = []
    x = np.asarray(x, float)

    def spatial(g):
        per_axis = [np.abs(g.edges(a) - x[a]) for a in range(len(x))]
        out.extend(np.concatenate(per_axis))
        if len(x) >= 2:
            mesh = np.meshgrid(*[v * v for v in per_axis], indexing="ij")
            out.extend(np.sqrt(sum(mesh)).ravel())

    if mu.density is not None:
        g = mu.density.grid
        spatial(CellGrid(g.lo[:-1], g.hi[:-1], g.shape[:-1]))
        out.extend(np.sqrt(2.0 * np.abs(g.edges(g.ndim - 1) - t)))
    if mu.tensor is not None:
        lam, theta = mu.tensor
        if lam.density is not None:
            spatial(lam.density.grid)
        out.extend(np.sqrt(2.0 * np.abs(theta.edges - t)))
    return np.unique(np.asarray(out, float))


def wolff(mu: SpaceTimeMeasure, x, t, p: PotentialParams) -> PointValue:
    """``W_R[mu](x, t)`` for nonnegative ``mu`` with ``R = p.R``.

    Atoms are summed exactly.  Densities are integrated in ``s`` with
    Gauss-Legendre panels in ``log s`` and the panel order is doubled until two
    successive results agree to ``p.rtol``; otherwise :class:`QuadratureError`.
    """
    _require_nonnegative(mu)
    x = np.atleast_1d(np.asarray(x, float))
    N = mu.N
    R = p.R
    total = 0.0
    if mu.has_atoms:
        v = _wolff_atoms(N, mu.points, mu.times, mu.weights, x, t, R)
        if v.infinite:
            return INF
        total += v.value
    lam_dens = None
    if mu.tensor is not None:
        lam, theta = mu.tensor
        v = _tensor_atom_wolff(N, lam, theta, x, t, R)
        if v.infinite or math.isinf(v.value):
            return INF
        total += v.value
        if lam.density is not None and np.any(lam.density.values):
            lam_dens = (SpatialMeasure(N, density=lam.density), theta)
    if (mu.density is None or not np.any(mu.density.values)) and lam_dens is None:
        return PointValue(total)

    smooth = SpaceTimeMeasure(N, density=mu.density, tensor=lam_dens)

    def mass(s):
        return cylinder_mass(smooth, ParabolicCylinder(x, t, s))

    far, near = _support_extent_spacetime(smooth, x, t)
    s_top = far
    s_hi = min(R, s_top)
    s_start = max(p.s_min, near)
    if s_start >= s_hi:
        part = 0.0
    else:
        s_loc = _local_cell_scale(smooth, x, t)
        s_lo = s_start
        head = 0.0
        if near == 0.0:
            s_lo = min(max(p.s_min, s_loc), s_hi)
            # mass is c * s^{N+2} below s_lo
            head = mass(s_lo) / (2.0 * s_lo ** N)
        knots = _log_grid(s_lo, s_hi, p.per_decade)
        kinks = _kink_scales(smooth, x, t)
        kinks = kinks[(kinks > s_lo * (1 + 1e-12)) & (kinks < s_hi * (1 - 1e-12))]
        knots = np.unique(np.concatenate([knots, kinks]))
        f = lambda s: mass(s) * s ** (-N - 1)
        order = 4
        prev = _panel_integral(f, knots, order)
        while True:
            order *= 2
            cur = _panel_integral(f, knots, order)
            if abs(cur - prev) <= p.rtol * abs(cur) + 1e-300:
                break
            if order >= p.max_order:
                raise QuadratureError(
                    f"Wolff scale quadrature did not converge at x={x.tolist()}, t={t}: "
                    f"{prev!r} vs {cur!r} at order {order}")
            prev = cur
        part = head + cur
    if R > s_top:
        part += smooth.total * (s_top ** (-N) - (0.0 if math.isinf(R) else R ** (-N))) / N
    return PointValue(total + part)


# --------------------------------------------------------------------------- fields

@dataclass
class PotentialField:
    """Scalar samples on the nodes of a :class:`SpaceTimeGrid` with an infinity mask."""

    grid: SpaceTimeGrid
    values: np.ndarray
    infinite: np.ndarray
    kind: str

    def __post_init__(self):
        self.values = np.asarray(self.values, float).reshape(self.grid.shape)
        self.infinite = np.asarray(self.infinite, bool).reshape(self.grid.shape)
        self.values[self.infinite] = np.inf

    @classmethod
    def zeros(cls, grid, kind):
        return cls(grid, np.zeros(grid.shape), np.zeros(grid.shape, bool), kind)

    def finite_max(self):
        v = self.values[~self.infinite]
        return float(v.max()) if v.size else -math.inf

    def sup(self):
        return math.inf if self.infinite.any() else float(self.values.max())

    def rows(self):
        pts, ts = self.grid.nodes()
        return pts, ts, self.values.ravel(), self.infinite.ravel()

    def to_csv(self, path, header=True):
        pts, ts, vals, inf = self.rows()
        N = self.grid.N
        with open(path, "w") as fh:
            if header:
                fh.write(",".join([f"x{i + 1}" for i in range(N)] + ["t", "value", "is_infinite"]) + "\n")
            for p, t, v, f in zip(pts, ts, vals, inf):
                cells = [f"{c:.17g}" for c in p] + [f"{t:.17g}", "inf" if f else f"{v:.17g}", "1" if f else "0"]
                fh.write(",".join(cells) + "\n")


def _chunks(n, workers):
    k = max(1, min(n, 4 * max(workers, 1)))
    edges = np.linspace(0, n, k + 1).astype(int)
    return [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def wolff_atoms_field(mu: SpaceTimeMeasure, grid: SpaceTimeGrid, R, workers=1):
    """Closed-form atomic Wolff field; bitwise independent of ``workers``."""
    from ._fast import wolff_atoms_block

    xs = np.ascontiguousarray(grid.spatial_points())
    ts = np.ascontiguousarray(grid.times)
    out = np.zeros((len(xs), len(ts)))
    flag = np.zeros((len(xs), len(ts)), dtype=np.bool_)
    if not mu.has_atoms:
        return out.reshape(grid.shape), flag.reshape(grid.shape)
    py = np.ascontiguousarray(mu.points, dtype=float)
    pt = np.ascontiguousarray(mu.times, dtype=float)
    w = np.ascontiguousarray(mu.weights, dtype=float)
    R2 = math.inf if math.isinf(R) else R * R
    RN = 0.0 if math.isinf(R) else R ** (-mu.N)

    def run(ab):
        a, b = ab
        wolff_atoms_block(xs[a:b], ts, py, pt, w, mu.N, R2, RN, out[a:b], flag[a:b])

    jobs = _chunks(len(xs), workers)
    if workers <= 1:
        for j in jobs:
            run(j)
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(run, jobs))
    return out.reshape(grid.shape), flag.reshape(grid.shape)


def _aligned_density(dens: CellDensity, grid: SpaceTimeGrid):
    """Density on cells aligned with the node lattice (same spacing, integer offset).

    Returns ``(values, offsets)`` with ``offsets[a]`` the index of node 0 in the
    density's cell numbering along axis ``a``.
    """
    cg = grid.cells
    h = cg.h
    g = dens.grid
    # node i sits in cell i of grid.cells; time nodes are at the cells' upper faces
    shift = (np.asarray(cg.lo) - np.asarray(g.lo)) / h
    if np.allclose(g.h, h, rtol=1e-12, atol=0) and np.allclose(shift, np.round(shift), atol=1e-9):
        return dens.values, np.round(shift).astype(int)
    # remap onto an aligned grid covering the density
    lo_idx = np.floor((np.asarray(g.lo) - np.asarray(cg.lo)) / h + 1e-9).astype(int)
    hi_idx = np.ceil((np.asarray(g.hi) - np.asarray(cg.lo)) / h - 1e-9).astype(int)
    lo = np.asarray(cg.lo) + lo_idx * h
    hi = np.asarray(cg.lo) + hi_idx * h
    target = CellGrid(tuple(lo), tuple(hi), tuple(hi_idx - lo_idx))
    return remap_mass(dens.values, g, target), -lo_idx


def wolff_kernel_table(h, dt, o_lo, shape, N, R, order=6, depth=18):
    """Integrals of ``K_R(z, sigma) = N^{-1}(max(|z|, sqrt(2|sigma|))^{-N} - R^{-N})_+``.

    Entry ``j`` integrates over the cell at offset ``o = o_lo + j``: spatially
    the box centred at ``o h`` of side ``h``, in time ``[o_t dt, (o_t + 1) dt]``.
    The time integral is analytic; space uses tensor Gauss-Legendre with
    geometric subdivision toward the singular point ``z = 0``.
    """
    from ._fast import time_integrated_table

    h = np.asarray(h, float)
    o_lo = np.asarray(o_lo, int)
    shape = tuple(int(s) for s in shape)
    sp_shape = shape[:N]
    n_t = shape[N]
    offs = [o_lo[a] + np.arange(sp_shape[a]) for a in range(N)]
    mesh = np.meshgrid(*offs, indexing="ij")
    centres = np.stack([m.ravel() for m in mesh], axis=1) * h
    ncell = centres.shape[0]
    gx, gw = np.polynomial.legendre.leggauss(order)
    ref = np.stack([m.ravel() for m in np.meshgrid(*([gx] * N), indexing="ij")], axis=1)
    refw = np.prod(np.stack([m.ravel() for m in np.meshgrid(*([gw] * N), indexing="ij")], axis=1), axis=1)

    near = np.all(np.abs(centres) <= 1.5 * h + 1e-12, axis=1)
    far_idx = np.nonzero(~near)[0]
    pts_list, w_list, cell_list = [], [], []
    if len(far_idx):
        c = centres[far_idx]
        pts = c[:, None, :] + 0.5 * h * ref[None, :, :]
        pts_list.append(pts.reshape(-1, N))
        w_list.append(np.tile(refw * np.prod(0.5 * h), len(far_idx)))
        cell_list.append(np.repeat(far_idx, len(refw)))
    for ci in np.nonzero(near)[0]:
        lo = centres[ci] - 0.5 * h
        hi = centres[ci] + 0.5 * h
        boxes = _singular_boxes(lo, hi, depth)
        for blo, bhi in boxes:
            mid, half = 0.5 * (blo + bhi), 0.5 * (bhi - blo)
            pts_list.append(mid + half * ref)
            w_list.append(refw * np.prod(half))
            cell_list.append(np.full(len(refw), ci))
    pts = np.concatenate(pts_list)
    wts = np.concatenate(w_list)
    cells = np.concatenate(cell_list)
    r = np.sqrt(np.sum(pts * pts, axis=1))
    sig = (o_lo[N] + np.arange(n_t + 1)) * dt
    out = np.zeros((ncell, n_t))
    RN = 0.0 if math.isinf(R) else R ** (-N)
    time_integrated_table(r, wts, cells.astype(np.int64), sig.astype(float), N, float(R), RN, out)
    return out.reshape(sp_shape + (n_t,))


def _singular_boxes(lo, hi, depth):
    """Split a box into pieces that are well separated from the origin (or tiny)."""
    out = []
    stack = [(lo, hi, 0)]
    while stack:
        a, b, k = stack.pop()
        diam = float(np.linalg.norm(b - a))
        dist = float(np.linalg.norm(np.clip(0.0, a, b)))
        if dist >= 0.5 * diam or k >= depth:
            out.append((a, b))
            continue
        m = 0.5 * (a + b)
        n = len(a)
        for corner in range(2 ** n):
            bits = [(corner >> i) & 1 for i in range(n)]
            ca = np.where(bits, m, a)
            cb = np.where(bits, b, m)
            stack.append((ca, cb, k + 1))
    return out


def wolff_density_field(dens: CellDensity, grid: SpaceTimeGrid, R):
    """``W_R`` of a cell density at every node by FFT convolution with kernel cell integrals."""
    vals, off = _aligned_density(dens, grid)
    N = grid.N
    nn = np.array(grid.shape)
    nc = np.array(vals.shape)
    h = grid.cells.h
    # offsets o = node_index + off - cell_index range over [off - nc + 1, off + nn - 1]
    o_lo = off - nc + 1
    tshape = nn + nc - 1
    table = wolff_kernel_table(h[:N], h[N], o_lo, tshape, N, R)
    full = fftconvolve(vals, table, mode="full")
    sl = tuple(slice(c - 1, c - 1 + n) for c, n in zip(nc, nn))
    out = full[sl]
    # FFT rounding can leave tiny negatives where the field vanishes
    return np.where(np.abs(out) < 1e-14 * max(np.abs(out).max(), 1e-300), 0.0, out)


def field(kind, measure, grid: SpaceTimeGrid, p: PotentialParams, workers=1):
    """Evaluate ``kind`` in {'wolff', 'max1', 'max2'} at every node of ``grid``.

    Atomic Wolff parts use the closed form; density parts use FFT sweeps over
    precomputed kernel tables.  Other combinations fall back to pointwise
    evaluation, parallel over spatial nodes with one node per task.
    """
    if kind not in ("wolff", "max1", "max2"):
        raise ValueError(f"unknown potential kind {kind!r}")
    _require_nonnegative(measure)
    if measure.is_zero:
        return PotentialField.zeros(grid, kind)
    if kind == "wolff":
        vals, inf = wolff_atoms_field(measure, grid, p.R, workers)
        if measure.density is not None:
            vals = vals + wolff_density_field(measure.density, grid, p.R)
        if measure.tensor is not None:
            tmu = SpaceTimeMeasure(measure.N, tensor=measure.tensor).discretize_tensor(grid.cells.edges(grid.N))
            v2, i2 = wolff_atoms_field(tmu, grid, p.R, workers)
            vals, inf = vals + v2, inf | i2
            if tmu.density is not None:
                vals = vals + wolff_density_field(tmu.density, grid, p.R)
        return PotentialField(grid, vals, inf, kind)
    if kind == "max1":
        return _max1_field(measure, grid, p, workers)
    return _max2_field(measure, grid, p, workers)


def _pointwise_nodes(fn, nodes, workers):
    def run(i):
        try:
            return fn(i)
        except Exception as exc:  # attach the node to the message
            raise type(exc)(f"at node {nodes[i]}: {exc}") from exc

    if workers <= 1:
        return [run(i) for i in range(len(nodes))]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(run, range(len(nodes))))


def _max1_field(omega: SpatialMeasure, grid, p, workers):
    pts = grid.spatial_points()
    if omega.is_atomic or omega.density is None:
        res = _pointwise_nodes(lambda i: max1(omega, pts[i], p), pts, workers)
    elif not omega.has_atoms:
        res = _max_density_fft(omega.density, grid, p, spatial=True)
    else:
        res = _pointwise_nodes(lambda i: max1(omega, pts[i], p), pts, workers)
    if isinstance(res, PotentialField):
        return res
    v = np.array([r.value for r in res]).reshape(grid.nx)
    f = np.array([r.infinite for r in res]).reshape(grid.nx)
    shape = grid.shape
    return PotentialField(grid, np.broadcast_to(v[..., None], shape).copy(),
                          np.broadcast_to(f[..., None], shape).copy(), "max1")


def _max2_field(mu: SpaceTimeMeasure, grid, p, workers):
    if mu.density is not None and not mu.has_atoms and mu.tensor is None:
        return _max_density_fft(mu.density, grid, p, spatial=False)
    pts, ts = grid.nodes()
    res = _pointwise_nodes(lambda i: max2(mu, pts[i], ts[i], p), pts, workers)
    v = np.array([r.value for r in res])
    f = np.array([r.infinite for r in res])
    return PotentialField(grid, v, f, "max2")


def _overlap_table(h, o_lo, shape, s, dt=None, t_shift=None):
    N = len(h)
    offs = [o_lo[a] + np.arange(shape[a]) for a in range(N)]
    mesh = np.meshgrid(*offs, indexing="ij")
    c = np.stack([m.ravel() for m in mesh], axis=1) * h
    ov = box_ball_overlap(c - 0.5 * h, c + 0.5 * h, np.zeros(N), s).reshape(tuple(shape[:N]))
    if dt is None:
        return ov
    ot = o_lo[N] + np.arange(shape[N])
    # node time minus cell time spans [o dt, (o+1) dt]; window is [-s^2/2, s^2/2]
    tw = interval_overlap(ot * dt, (ot + 1) * dt, -0.5 * s * s, 0.5 * s * s)
    return ov[..., None] * tw


def _max_density_fft(dens: CellDensity, grid: SpaceTimeGrid, p, spatial):
    """Maximal potential of a density on a coarse log grid of ``s`` (a lower bound),
    polished pointwise at the nodes attaining the maximum."""
    N = grid.N
    if spatial:
        sg = grid.spatial_cells
        fake = SpaceTimeGrid(sg.lo, sg.hi, sg.shape, 1.0, 1)
        vals, off = _aligned_density(CellDensity(CellGrid(dens.grid.lo + (0.0,), dens.grid.hi + (1.0,),
                                                          dens.grid.shape + (1,)),
                                                 dens.values[..., None]), fake)
        vals, off = vals[..., 0], off[:N]
        nn = np.array(grid.nx)
        h = sg.h
    else:
        vals, off = _aligned_density(dens, grid)
        nn = np.array(grid.shape)
        h = grid.cells.h
    nc = np.array(vals.shape)
    o_lo = off - nc + 1
    tshape = nn + nc - 1
    lo = np.asarray(grid.lo)
    hi = np.asarray(grid.hi)
    ext = float(np.linalg.norm(np.maximum(hi - lo, np.asarray(dens.grid.hi[:N]) - np.asarray(dens.grid.lo[:N]))))
    span = np.linalg.norm(np.asarray(dens.grid.hi[:N]) - lo) + np.linalg.norm(hi - np.asarray(dens.grid.lo[:N]))
    s_hi = min(p.R, max(ext, span))
    if not spatial:
        T_span = max(abs(dens.grid.hi[N] - grid.t0), abs(grid.t1 - dens.grid.lo[N]))
        s_hi = min(p.R, max(s_hi, math.sqrt(2 * T_span)))
    s_lo = max(p.s_min, 0.25 * float(h[:N].min()))
    scales = _log_grid(s_lo, s_hi, p.sup_per_decade)
    if spatial:
        scales = np.unique(np.concatenate([scales, [0.5] if 0.5 <= s_hi else []]))
    best = np.zeros(tuple(nn))
    sl = tuple(slice(c - 1, c - 1 + n) for c, n in zip(nc, nn))
    for s in scales:
        if spatial:
            tab = _overlap_table(h, o_lo, tshape, s)
            den = s ** N * h1(s, p.alpha)
        else:
            tab = _overlap_table(h[:N], o_lo, tshape, s, dt=h[N])
            den = s ** N * h2(s, p.beta, p.d)
        m = fftconvolve(vals, tab, mode="full")[sl]
        np.maximum(best, m / den, out=best)
    # polish the attaining node pointwise
    if spatial:
        k = np.unravel_index(int(np.argmax(best)), best.shape)
        x = np.array([grid.x_axes()[a][k[a]] for a in range(N)])
        v = max1(SpatialMeasure(N, density=dens), x, p).value
        best[k] = max(best[k], v)
        shape = grid.shape
        return PotentialField(grid, np.broadcast_to(best[..., None], shape).copy(),
                              np.zeros(shape, bool), "max1")
    k = np.unravel_index(int(np.argmax(best)), best.shape)
    x = np.array([grid.x_axes()[a][k[a]] for a in range(N)])
    v = max2(SpaceTimeMeasure(N, density=dens), x, grid.times[k[N]], p).value
    best[k] = max(best[k], v)
    return PotentialField(grid, best, np.zeros(grid.shape, bool), "max2")


def sup_norm(kind, measure, grid, p, workers=1):
    """Probe estimate of ``||M||_inf`` (a lower bound of the true supremum)."""
    if measure.is_zero:
        return 0.0
    f = field(kind, measure, grid, p, workers)
    return f.sup()
