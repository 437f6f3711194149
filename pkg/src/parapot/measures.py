"""Finite signed measures on a box (or ball) and on the space-time slab over it.

A measure is a sum of three parts, any of which may be absent:

* atoms: weighted point masses,
* a density that is constant on each cell of a uniform grid,
* (space-time only) a tensor product ``lam x theta`` of a spatial measure with a
  nonnegative step function of time.

Balls and cylinders are closed: an atom on the boundary counts as inside.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from ._geometry import box_ball_overlap, interval_overlap
from .grids import CellGrid


# --------------------------------------------------------------------------- domain

@dataclass(frozen=True)
class Domain:
    """Box ``prod [lo_i, hi_i]`` or ball ``B_radius(center)`` with horizon ``T``."""

    kind: str
    T: float
    lo: tuple = ()
    hi: tuple = ()
    center: tuple = ()
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in ("box", "ball"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if not (self.T > 0):
            raise ValueError("time horizon T must be > 0")
        if self.kind == "box":
            object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
            object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
            if len(self.lo) == 0 or len(self.lo) != len(self.hi):
                raise ValueError("box needs matching lo/hi of length N >= 1")
            if any(b <= a for a, b in zip(self.lo, self.hi)):
                raise ValueError("box edge lengths must be > 0")
        else:
            object.__setattr__(self, "center", tuple(float(v) for v in self.center))
            if len(self.center) == 0:
                raise ValueError("ball needs a center of length N >= 1")
            if not (self.radius > 0):
                raise ValueError("ball radius must be > 0")

    @classmethod
    def box(cls, lo, hi, T):
        return cls("box", float(T), lo=tuple(lo), hi=tuple(hi))

    @classmethod
    def unit_box(cls, N=2, T=0.5):
        return cls.box((0.0,) * N, (1.0,) * N, T)

    @classmethod
    def ball(cls, center, radius, T):
        return cls("ball", float(T), center=tuple(center), radius=float(radius))

    @property
    def N(self):
        return len(self.lo) if self.kind == "box" else len(self.center)

    @property
    def edges(self):
        if self.kind == "box":
            return np.subtract(self.hi, self.lo)
        return np.full(self.N, 2 * self.radius)

    @property
    def diam(self):
        if self.kind == "box":
            return float(np.linalg.norm(self.edges))
        return 2.0 * self.radius

    @property
    def d(self):
        """``diam + T``, the length scale entering every logarithmic weight."""
        return self.diam + self.T

    def bounding_box(self):
        if self.kind == "box":
            return self.lo, self.hi
        c = np.asarray(self.center)
        return tuple(c - self.radius), tuple(c + self.radius)

    def contains(self, pts, tol=0.0):
        """Closed membership test for points of shape (M, N)."""
        pts = np.atleast_2d(pts)
        if self.kind == "box":
            return np.all((pts >= np.asarray(self.lo) - tol) & (pts <= np.asarray(self.hi) + tol), axis=1)
        return np.linalg.norm(pts - np.asarray(self.center), axis=1) <= self.radius + tol

    def on_boundary(self, pts, tol=1e-12):
        pts = np.atleast_2d(pts)
        if self.kind == "box":
            gap = np.minimum(pts - np.asarray(self.lo), np.asarray(self.hi) - pts)
            return self.contains(pts, tol) & (np.min(np.abs(gap), axis=1) <= tol)
        r = np.linalg.norm(pts - np.asarray(self.center), axis=1)
        return np.abs(r - self.radius) <= tol

    def to_dict(self):
        if self.kind == "box":
            return {"kind": "box", "lo": list(self.lo), "hi": list(self.hi), "T": self.T}
        return {"kind": "ball", "center": list(self.center), "radius": self.radius, "T": self.T}

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind", "box")
        if kind == "box":
            return cls.box(d["lo"], d["hi"], d["T"])
        return cls.ball(d["center"], d["radius"], d["T"])


@dataclass(frozen=True)
class ParabolicCylinder:
    """``Q_s(x, t) = B_s(x) x [t - s^2/2, t + s^2/2]``."""

    x: tuple
    t: float
    s: float

    def __post_init__(self):
        if not (self.s > 0):
            raise ValueError("cylinder scale must be > 0")
        object.__setattr__(self, "x", tuple(float(v) for v in np.atleast_1d(self.x)))

    @property
    def time_window(self):
        h = 0.5 * self.s * self.s
        return self.t - h, self.t + h


# --------------------------------------------------------------------------- parts

@dataclass(frozen=True)
class CellDensity:
    """Piecewise-constant density (mass per unit volume) on a uniform grid."""

    grid: CellGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("density values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def total(self):
        return float(np.sum(self.values) * self.grid.cell_volume)

    @property
    def variation(self):
        return float(np.sum(np.abs(self.values)) * self.grid.cell_volume)

    def scaled(self, c):
        return CellDensity(self.grid, c * self.values)

    def _window(self, axis, a, b):
        lo, h, n = self.grid.lo[axis], self.grid.h[axis], self.grid.shape[axis]
        i0 = max(int(math.floor((a - lo) / h)) - 1, 0)
        i1 = min(int(math.ceil((b - lo) / h)) + 1, n)
        return i0, max(i1, i0)

    def region_mass(self, center, s, window=None):
        """Mass in ``B_s(center)`` (spatial axes) times an optional last-axis window."""
        g = self.grid
        center = np.asarray(center, dtype=float)
        ns = len(center)
        sl, edges = [], []
        for a in range(ns):
            i0, i1 = self._window(a, center[a] - s, center[a] + s)
            if i1 <= i0:
                return 0.0
            sl.append(slice(i0, i1))
            edges.append(g.edges(a)[i0:i1 + 1])
        if window is not None:
            i0, i1 = self._window(ns, window[0], window[1])
            if i1 <= i0:
                return 0.0
            e = g.edges(ns)[i0:i1 + 1]
            tw = interval_overlap(e[:-1], e[1:], window[0], window[1])
            sl.append(slice(i0, i1))
        vals = self.values[tuple(sl)]
        mesh_lo = np.meshgrid(*[e[:-1] for e in edges], indexing="ij")
        mesh_hi = np.meshgrid(*[e[1:] for e in edges], indexing="ij")
        lo = np.stack([m.ravel() for m in mesh_lo], axis=1)
        hi = np.stack([m.ravel() for m in mesh_hi], axis=1)
        ov = box_ball_overlap(lo, hi, center, s).reshape(vals.shape[:ns])
        if window is None:
            return float(np.sum(vals * ov))
        return float(np.sum((vals @ tw) * ov))


def _merge_atoms(points, weights, times=None):
    """Combine atoms at identical locations; drop zero weights; canonical order."""
    if len(weights) == 0:
        return points, weights, times
    key = points if times is None else np.column_stack([points, times])
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    w = np.zeros(len(uniq))
    np.add.at(w, inv.ravel(), weights)
    keep = w != 0
    uniq, w = uniq[keep], w[keep]
    if times is None:
        return uniq, w, None
    return uniq[:, :-1], w, uniq[:, -1]


# --------------------------------------------------------------------------- spatial

@dataclass(frozen=True)
class SpatialMeasure:
    """Finite signed measure on a spatial domain (atoms plus a cell density)."""

    N: int
    points: np.ndarray = None
    weights: np.ndarray = None
    density: CellDensity | None = None

    def __post_init__(self):
        pts = np.zeros((0, self.N)) if self.points is None else np.asarray(self.points, float).reshape(-1, self.N)
        w = np.zeros(0) if self.weights is None else np.asarray(self.weights, float).ravel()
        if len(pts) != len(w):
            raise ValueError("atom points and weights differ in length")
        if not np.all(np.isfinite(w)) or not np.all(np.isfinite(pts)):
            raise ValueError("atoms must be finite")
        pts, w, _ = _merge_atoms(pts, w)
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        if self.density is not None and self.density.grid.ndim != self.N:
            raise ValueError("density grid dimension does not match N")

    @classmethod
    def zero(cls, N):
        return cls(N)

    @classmethod
    def dirac(cls, x, w=1.0):
        x = np.atleast_1d(np.asarray(x, float))
        return cls(len(x), x[None, :], [w])

    @classmethod
    def from_density(cls, grid: CellGrid, values):
        return cls(grid.ndim, density=CellDensity(grid, values))

    @property
    def has_atoms(self):
        return len(self.weights) > 0

    @property
    def is_atomic(self):
        return self.density is None

    @property
    def is_zero(self):
        return not self.has_atoms and (self.density is None or not np.any(self.density.values))

    @property
    def total(self):
        return float(np.sum(self.weights)) + (self.density.total if self.density else 0.0)

    @property
    def variation(self):
        return float(np.sum(np.abs(self.weights))) + (self.density.variation if self.density else 0.0)

    def is_nonnegative(self):
        return bool(np.all(self.weights >= 0) and (self.density is None or np.all(self.density.values >= 0)))

    def jordan(self):
        """``(positive part, negative part)``, both nonnegative."""
        return self.positive_part(), self.negative_part()

    def positive_part(self):
        return self._part(1.0)

    def negative_part(self):
        return self._part(-1.0)

    def _part(self, sign):
        w = sign * self.weights
        keep = w > 0
        dens = None
        if self.density is not None:
            dens = CellDensity(self.density.grid, np.clip(sign * self.density.values, 0.0, None))
        return SpatialMeasure(self.N, self.points[keep], w[keep], dens)

    def scaled(self, c):
        return SpatialMeasure(self.N, self.points, c * self.weights,
                              self.density.scaled(c) if self.density else None)

    def __neg__(self):
        return self.scaled(-1.0)

    def __add__(self, other):
        dens = self.density
        if other.density is not None:
            if dens is None:
                dens = other.density
            elif dens.grid.same_as(other.density.grid):
                dens = CellDensity(dens.grid, dens.values + other.density.values)
            else:
                raise ValueError("cannot add densities on different grids")
        return SpatialMeasure(self.N, np.vstack([self.points, other.points]),
                              np.concatenate([self.weights, other.weights]), dens)

    def ball_mass(self, x, s):
        return ball_mass(self, x, s)

    def entry_scales(self, x):
        """Distances from ``x`` to each atom (the scale at which it enters the ball)."""
        return np.linalg.norm(self.points - np.asarray(x, float), axis=1)


def ball_mass(omega: SpatialMeasure, x, s):
    """``omega(B_s(x))`` for the closed ball; exact for atoms and 1D/2D densities."""
    if not (s > 0):
        raise ValueError("ball radius must be > 0")
    x = np.atleast_1d(np.asarray(x, float))
    m = 0.0
    if omega.has_atoms:
        m += float(np.sum(omega.weights[omega.entry_scales(x) <= s]))
    if omega.density is not None:
        m += omega.density.region_mass(x, s)
    return m


# --------------------------------------------------------------------------- space-time

@dataclass(frozen=True)
class StepProfile:
    """Nonnegative step function of time: value ``values[i]`` on ``[edges[i], edges[i+1])``."""

    edges: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, float).ravel()
        v = np.asarray(self.values, float).ravel()
        if len(e) != len(v) + 1 or np.any(np.diff(e) <= 0):
            raise ValueError("step profile needs increasing edges and len(values) = len(edges) - 1")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("time profile must be nonnegative and finite")
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_triples(cls, triples):
        """Build from ``[[t0, t1, v], ...]``; gaps between pieces are filled with zero."""
        triples = sorted((float(a), float(b), float(v)) for a, b, v in triples)
        edges, values = [triples[0][0]], []
        for a, b, v in triples:
            if a < edges[-1] - 1e-15:
                raise ValueError("time profile pieces overlap")
            if a > edges[-1]:
                edges.append(a)
                values.append(0.0)
            edges.append(b)
            values.append(v)
        return cls(np.array(edges), np.array(values))

    def integral(self, a=-np.inf, b=np.inf):
        return float(np.sum(self.values * interval_overlap(self.edges[:-1], self.edges[1:], a, b)))

    def to_triples(self):
        return [[float(a), float(b), float(v)] for a, b, v in zip(self.edges[:-1], self.edges[1:], self.values)]


@dataclass(frozen=True)
class SpaceTimeMeasure:
    """Finite signed measure on ``Omega x (0, T)``."""

    N: int
    points: np.ndarray = None
    times: np.ndarray = None
    weights: np.ndarray = None
    density: CellDensity | None = None
    tensor: tuple | None = None  # (SpatialMeasure lam, StepProfile theta)

    def __post_init__(self):
        pts = np.zeros((0, self.N)) if self.points is None else np.asarray(self.points, float).reshape(-1, self.N)
        t = np.zeros(0) if self.times is None else np.asarray(self.times, float).ravel()
        w = np.zeros(0) if self.weights is None else np.asarray(self.weights, float).ravel()
        if not (len(pts) == len(t) == len(w)):
            raise ValueError("atom points, times and weights differ in length")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(t)) and np.all(np.isfinite(w))):
            raise ValueError("atoms must be finite")
        pts, w, t = _merge_atoms(pts, w, t)
        if t is None:
            t = np.zeros(0)
        for a in (pts, w, t):
            a.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "weights", w)
        if self.density is not None and self.density.grid.ndim != self.N + 1:
            raise ValueError("space-time density grid must have N + 1 axes")
        if self.tensor is not None:
            lam, theta = self.tensor
            if lam.N != self.N or not isinstance(theta, StepProfile):
                raise ValueError("tensor part must be (SpatialMeasure, StepProfile)")

    @classmethod
    def zero(cls, N):
        return cls(N)

    @classmethod
    def atom(cls, x, t, w=1.0):
        x = np.atleast_1d(np.asarray(x, float))
        return cls(len(x), x[None, :], [t], [w])

    @classmethod
    def from_density(cls, grid: CellGrid, values):
        return cls(grid.ndim - 1, density=CellDensity(grid, values))

    @classmethod
    def product(cls, lam: SpatialMeasure, theta: StepProfile):
        return cls(lam.N, tensor=(lam, theta))

    @property
    def has_atoms(self):
        return len(self.weights) > 0

    @property
    def is_atomic(self):
        return self.density is None and self.tensor is None

    @property
    def is_zero(self):
        dens_zero = self.density is None or not np.any(self.density.values)
        ten_zero = self.tensor is None or self.tensor[0].is_zero or not np.any(self.tensor[1].values)
        return not self.has_atoms and dens_zero and ten_zero

    @property
    def total(self):
        m = float(np.sum(self.weights)) + (self.density.total if self.density else 0.0)
        if self.tensor is not None:
            m += self.tensor[0].total * self.tensor[1].integral()
        return m

    @property
    def variation(self):
        m = float(np.sum(np.abs(self.weights))) + (self.density.variation if self.density else 0.0)
        if self.tensor is not None:
            m += self.tensor[0].variation * self.tensor[1].integral()
        return m

    def is_nonnegative(self):
        ok = bool(np.all(self.weights >= 0))
        ok &= self.density is None or bool(np.all(self.density.values >= 0))
        ok &= self.tensor is None or self.tensor[0].is_nonnegative()
        return ok

    def jordan(self):
        return self.positive_part(), self.negative_part()

    def positive_part(self):
        return self._part(1.0)

    def negative_part(self):
        return self._part(-1.0)

    def _part(self, sign):
        w = sign * self.weights
        keep = w > 0
        dens = None
        if self.density is not None:
            dens = CellDensity(self.density.grid, np.clip(sign * self.density.values, 0.0, None))
        ten = None
        if self.tensor is not None:
            ten = (self.tensor[0]._part(sign), self.tensor[1])
        return SpaceTimeMeasure(self.N, self.points[keep], self.times[keep], w[keep], dens, ten)

    def scaled(self, c):
        dens = self.density.scaled(c) if self.density else None
        ten = (self.tensor[0].scaled(c), self.tensor[1]) if self.tensor else None
        return SpaceTimeMeasure(self.N, self.points, self.times, c * self.weights, dens, ten)

    def __neg__(self):
        return self.scaled(-1.0)

    def __add__(self, other):
        dens = self.density
        if other.density is not None:
            if dens is None:
                dens = other.density
            elif dens.grid.same_as(other.density.grid):
                dens = CellDensity(dens.grid, dens.values + other.density.values)
            else:
                raise ValueError("cannot add densities on different grids")
        if self.tensor is not None and other.tensor is not None:
            raise ValueError("cannot add two tensor parts")
        return SpaceTimeMeasure(self.N, np.vstack([self.points, other.points]),
                                np.concatenate([self.times, other.times]),
                                np.concatenate([self.weights, other.weights]),
                                dens, self.tensor or other.tensor)

    def atoms_only(self):
        return SpaceTimeMeasure(self.N, self.points, self.times, self.weights)

    def entry_scales(self, x, t):
        """Smallest ``s`` with atom ``j`` inside the closed cylinder ``Q_s(x, t)``."""
        r = np.linalg.norm(self.points - np.asarray(x, float), axis=1)
        return np.maximum(r, np.sqrt(2.0 * np.abs(self.times - t)))

    def cylinder_mass(self, c: ParabolicCylinder):
        return cylinder_mass(self, c)

    def discretize_tensor(self, tgrid_edges):
        """Tensor part as atoms and a density on the given time cells (exact mass)."""
        if self.tensor is None:
            return SpaceTimeMeasure.zero(self.N)
        lam, theta = self.tensor
        e = np.asarray(tgrid_edges, float)
        mass_t = np.array([theta.integral(a, b) for a, b in zip(e[:-1], e[1:])])
        if abs(mass_t.sum() - theta.integral()) > 1e-12 * max(1.0, theta.integral()):
            raise ValueError("time profile extends beyond the time grid")
        tc = 0.5 * (e[:-1] + e[1:])
        nz = np.nonzero(mass_t)[0]
        pts = np.repeat(lam.points, len(nz), axis=0)
        ts = np.tile(tc[nz], len(lam.points))
        ws = np.outer(lam.weights, mass_t[nz]).ravel()
        dens = None
        if lam.density is not None:
            sg = lam.density.grid
            if not np.allclose(np.diff(e), e[1] - e[0]):
                raise ValueError("tensor density discretization needs a uniform time grid")
            g = CellGrid(sg.lo + (e[0],), sg.hi + (e[-1],), sg.shape + (len(e) - 1,))
            dens = CellDensity(g, lam.density.values[..., None] * (mass_t / np.diff(e)))
        return SpaceTimeMeasure(self.N, pts, ts, ws, dens)


def cylinder_mass(mu: SpaceTimeMeasure, c: ParabolicCylinder):
    """``mu(Q_s(x, t))`` for the closed cylinder."""
    x = np.asarray(c.x, float)
    t0, t1 = c.time_window
    m = 0.0
    if mu.has_atoms:
        m += float(np.sum(mu.weights[mu.entry_scales(x, c.t) <= c.s]))
    if mu.density is not None:
        m += mu.density.region_mass(x, c.s, window=(t0, t1))
    if mu.tensor is not None:
        lam, theta = mu.tensor
        it = theta.integral(t0, t1)
        if it != 0.0:
            m += ball_mass(lam, x, c.s) * it
    return m


# --------------------------------------------------------------------------- mollification

def bump(r):
    """Unnormalized ``exp(-1/(1 - r^2))`` on ``r < 1``."""
    r = np.asarray(r, float)
    out = np.zeros_like(r)
    inside = r < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


def poly_bump(r):
    """``(1 - r^2)^3`` on ``r < 1``; an alternative kernel for independent ladders."""
    r = np.asarray(r, float)
    return np.where(r < 1.0, (1.0 - np.minimum(r, 1.0) ** 2) ** 3, 0.0)


KERNELS = {"bump": bump, "poly": poly_bump}


def _check_resolution(grid: CellGrid, radius):
    h = grid.h
    if np.any(radius < 2.0 * h):
        raise ValueError(
            f"mollifier radius {radius:g} under-resolved on grid with spacing {h.max():g} "
            "(need at least 2 cells per radius)")


def _padded(grid: CellGrid, pad):
    h = grid.h
    lo = tuple(np.asarray(grid.lo) - pad * h)
    hi = tuple(np.asarray(grid.hi) + pad * h)
    return CellGrid(lo, hi, tuple(np.asarray(grid.shape) + 2 * pad))


def _stencil(grid: CellGrid, radius, kernel):
    """Discrete kernel on integer cell offsets, normalized to unit sum."""
    h = grid.h
    half = np.ceil(radius / h).astype(int)
    axes = [np.arange(-k, k + 1) * hh / radius for k, hh in zip(half, h)]
    mesh = np.meshgrid(*axes, indexing="ij")
    r = np.sqrt(sum(m * m for m in mesh))
    k = KERNELS[kernel](r)
    return k / k.sum(), half


def _spread_atoms(points, weights, grid: CellGrid, radius, kernel):
    """Each atom becomes a normalized kernel sampled at cell centres (mass exact)."""
    out = np.zeros(grid.shape)
    h = grid.h
    lo = np.asarray(grid.lo)
    fn = KERNELS[kernel]
    for p, w in zip(points, weights):
        sl, axes = [], []
        for a in range(grid.ndim):
            i0 = max(int(np.floor((p[a] - radius - lo[a]) / h[a])), 0)
            i1 = min(int(np.ceil((p[a] + radius - lo[a]) / h[a])) + 1, grid.shape[a])
            sl.append(slice(i0, i1))
            axes.append((lo[a] + (np.arange(i0, i1) + 0.5) * h[a] - p[a]) / radius)
        mesh = np.meshgrid(*axes, indexing="ij")
        k = fn(np.sqrt(sum(m * m for m in mesh)))
        z = k.sum()
        if z <= 0:
            raise ValueError("atom lies outside the mollification grid")
        out[tuple(sl)] += w * k / z
    return out / grid.cell_volume


def _mollify_parts(points, weights, density, grid, radius, kernel, pad):
    _check_resolution(grid, radius)
    stencil, half = _stencil(grid, radius, kernel)
    p = int(half.max()) if pad else 0
    out_grid = _padded(grid, p) if p else grid
    vals = np.zeros(out_grid.shape)
    if len(weights):
        vals += _spread_atoms(points, weights, out_grid, radius, kernel)
    if density is not None:
        src = density.values
        if not density.grid.same_as(grid):
            from .grids import remap_mass
            src = remap_mass(src, density.grid, grid)
        conv = fftconvolve(src, stencil, mode="full")
        if np.all(src >= 0):
            # FFT round-off leaves ~1e-16 negatives; a nonnegative input stays nonnegative
            np.maximum(conv, 0.0, out=conv)
        if pad:
            # 'full' output extends each axis by half[a]; out_grid extends by p >= half[a]
            dst = tuple(slice(p - hh, p - hh + s) for hh, s in zip(half, conv.shape))
            vals[dst] += conv
        else:
            vals += conv[tuple(slice(hh, hh + s) for hh, s in zip(half, grid.shape))]
    return out_grid, vals


def mollify_spatial(omega: SpatialMeasure, n, grid: CellGrid | None = None, radius=None,
                    kernel="bump", pad=True):
    """Density of ``rho_n * omega`` with ``rho_n`` the normalized bump of radius ``1/n``.

    With ``pad=True`` the output grid is enlarged by the kernel support so mass is
    preserved exactly and the result is a convex combination of grid translates of
    the input (so maximal potentials cannot increase).  With ``pad=False`` the part
    pushed outside ``grid`` is discarded.
    """
    if n < 1:
        raise ValueError("smoothing index must be >= 1")
    radius = 1.0 / n if radius is None else float(radius)
    if grid is None:
        if omega.density is None:
            raise ValueError("a grid is required to mollify a purely atomic measure")
        grid = omega.density.grid
    out_grid, vals = _mollify_parts(omega.points, omega.weights, omega.density, grid, radius, kernel, pad)
    return SpatialMeasure(omega.N, density=CellDensity(out_grid, vals))


def mollify_spacetime(mu: SpaceTimeMeasure, n, grid: CellGrid | None = None, radius=None,
                      kernel="bump", pad=True):
    """Space-time analogue of :func:`mollify_spatial` with an isotropic (x, t) kernel."""
    if n < 1:
        raise ValueError("smoothing index must be >= 1")
    radius = 1.0 / n if radius is None else float(radius)
    if grid is None:
        if mu.density is None:
            raise ValueError("a grid is required to mollify a measure without a density")
        grid = mu.density.grid
    base = mu
    if mu.tensor is not None:
        disc = mu.discretize_tensor(grid.edges(grid.ndim - 1))
        base = SpaceTimeMeasure(mu.N, mu.points, mu.times, mu.weights, mu.density) + SpaceTimeMeasure(
            mu.N, disc.points, disc.times, disc.weights)
        if disc.density is not None:
            from .grids import remap_mass
            v = remap_mass(disc.density.values, disc.density.grid, grid)
            extra = CellDensity(grid, v)
            if base.density is not None:
                if not base.density.grid.same_as(grid):
                    v0 = remap_mass(base.density.values, base.density.grid, grid)
                    base = SpaceTimeMeasure(mu.N, base.points, base.times, base.weights, CellDensity(grid, v0))
                extra = CellDensity(grid, base.density.values + v)
            base = SpaceTimeMeasure(mu.N, base.points, base.times, base.weights, extra)
    pts = np.column_stack([base.points, base.times]) if base.has_atoms else np.zeros((0, mu.N + 1))
    out_grid, vals = _mollify_parts(pts, base.weights, base.density, grid, radius, kernel, pad)
    return SpaceTimeMeasure(mu.N, density=CellDensity(out_grid, vals))


def crop_density(density: CellDensity, grid: CellGrid):
    """Conservative restriction of a density onto ``grid`` (mass outside is dropped)."""
    from .grids import remap_mass

    return CellDensity(grid, remap_mass(density.values, density.grid, grid))


# --------------------------------------------------------------------------- JSON

def _density_from_json(d, ndim):
    spec = d["grid"]
    if len(spec) != ndim:
        raise ValueError(f"density grid needs {ndim} axes, got {len(spec)}")
    g = CellGrid([a[0] for a in spec], [a[1] for a in spec], [int(a[2]) for a in spec])
    vals = np.asarray(d["values"], float)
    if vals.size != int(np.prod(g.shape)):
        raise ValueError(f"density values: expected {int(np.prod(g.shape))} entries, got {vals.size}")
    return CellDensity(g, vals.reshape(g.shape))


def _density_to_json(dens: CellDensity):
    g = dens.grid
    return {"grid": [[a, b, n] for a, b, n in zip(g.lo, g.hi, g.shape)],
            "values": dens.values.ravel().tolist()}


def spatial_from_json(d, N=None, domain: Domain | None = None):
    atoms = d.get("atoms", [])
    if N is None:
        if atoms:
            N = len(atoms[0]["x"])
        elif "density" in d:
            N = len(d["density"]["grid"])
        elif domain is not None:
            N = domain.N
        else:
            raise ValueError("cannot infer dimension of an empty measure")
    pts = np.array([np.atleast_1d(a["x"]) for a in atoms], float).reshape(-1, N)
    w = np.array([a.get("w", 1.0) for a in atoms], float)
    dens = _density_from_json(d["density"], N) if d.get("density") else None
    m = SpatialMeasure(N, pts, w, dens)
    if domain is not None:
        _validate_support(domain, m.points, None)
    return m


def spatial_to_json(m: SpatialMeasure):
    out = {"atoms": [{"x": p.tolist(), "w": float(w)} for p, w in zip(m.points, m.weights)]}
    if m.density is not None:
        out["density"] = _density_to_json(m.density)
    return out


def spacetime_from_json(d, N=None, domain: Domain | None = None):
    atoms = d.get("atoms", [])
    if N is None:
        if atoms:
            N = len(np.atleast_1d(atoms[0]["x"]))
        elif d.get("density"):
            N = len(d["density"]["grid"]) - 1
        elif d.get("tensor"):
            N = spatial_from_json(d["tensor"]["lambda"], None, domain).N
        elif domain is not None:
            N = domain.N
        else:
            raise ValueError("cannot infer dimension of an empty measure")
    pts = np.array([np.atleast_1d(a["x"]) for a in atoms], float).reshape(-1, N)
    ts = np.array([a["t"] for a in atoms], float)
    w = np.array([a.get("w", 1.0) for a in atoms], float)
    dens = _density_from_json(d["density"], N + 1) if d.get("density") else None
    ten = None
    if d.get("tensor"):
        lam = spatial_from_json(d["tensor"]["lambda"], N, domain)
        ten = (lam, StepProfile.from_triples(d["tensor"]["theta"]))
    m = SpaceTimeMeasure(N, pts, ts, w, dens, ten)
    if domain is not None:
        _validate_support(domain, m.points, m.times)
    return m


def spacetime_to_json(m: SpaceTimeMeasure):
    out = {"atoms": [{"x": p.tolist(), "t": float(t), "w": float(w)}
                     for p, t, w in zip(m.points, m.times, m.weights)]}
    if m.density is not None:
        out["density"] = _density_to_json(m.density)
    if m.tensor is not None:
        out["tensor"] = {"lambda": spatial_to_json(m.tensor[0]), "theta": m.tensor[1].to_triples()}
    return out


def _validate_support(domain: Domain, pts, times):
    if len(pts) == 0:
        return
    if pts.shape[1] != domain.N:
        raise ValueError("measure dimension does not match the domain")
    bad = ~domain.contains(pts, tol=1e-12)
    if np.any(bad):
        raise ValueError(f"atom at {pts[np.argmax(bad)].tolist()} lies outside the closed domain")
    if times is not None and np.any((times < -1e-12) | (times > domain.T + 1e-12)):
        raise ValueError("atom time outside [0, T]")
    if np.any(domain.on_boundary(pts)):
        warnings.warn("atoms on the lateral boundary carry no Dirichlet-compatible solution",
                      stacklevel=3)


def load_measure(path, kind="spacetime", domain=None):
    with open(path) as fh:
        d = json.load(fh)
    return spacetime_from_json(d, domain=domain) if kind == "spacetime" else spatial_from_json(d, domain=domain)
