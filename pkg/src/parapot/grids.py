"""Uniform cell grids and the space-time node lattice shared by all modules.

Node convention: spatial nodes sit at cell centres, time nodes sit on the
upper face of each time cell, ``t_k = t0 + k * dt`` for ``k = 1..nt``.  Node
``(i, k)`` therefore belongs to the space-time cell ``(i, k)``, which keeps
node-to-cell offsets translation invariant (needed by the FFT sweeps).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CellGrid:
    """Uniform axis-aligned cell grid in D dimensions."""

    lo: tuple
    hi: tuple
    shape: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        shape = tuple(int(v) for v in self.shape)
        if not (len(lo) == len(hi) == len(shape)):
            raise ValueError("lo, hi and shape must have equal length")
        if any(b <= a for a, b in zip(lo, hi)):
            raise ValueError("grid edges must satisfy hi > lo")
        if any(n < 1 for n in shape):
            raise ValueError("grid shape entries must be >= 1")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "shape", shape)

    @property
    def ndim(self):
        return len(self.shape)

    @property
    def h(self):
        return np.array([(b - a) / n for a, b, n in zip(self.lo, self.hi, self.shape)])

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    def edges(self, axis):
        return np.linspace(self.lo[axis], self.hi[axis], self.shape[axis] + 1)

    def centers(self, axis):
        e = self.edges(axis)
        return 0.5 * (e[:-1] + e[1:])

    def cell_bounds(self):
        """Flattened (C order) arrays of cell lower and upper corners."""
        lows = np.meshgrid(*[self.edges(a)[:-1] for a in range(self.ndim)], indexing="ij")
        lo = np.stack([g.ravel() for g in lows], axis=1)
        return lo, lo + self.h

    def same_as(self, other):
        return (self.shape == other.shape
                and np.allclose(self.lo, other.lo, rtol=0, atol=1e-12)
                and np.allclose(self.hi, other.hi, rtol=0, atol=1e-12))


def remap_matrix(src_edges, dst_edges):
    """Fraction of each source cell falling in each destination cell.

    Returns ``A`` with ``A[i, j] = |dst_i cap src_j| / |src_j|`` so that mass is
    conserved wherever the destination covers the source.
    """
    lo = np.maximum(dst_edges[:-1, None], src_edges[None, :-1])
    hi = np.minimum(dst_edges[1:, None], src_edges[None, 1:])
    return np.clip(hi - lo, 0.0, None) / np.diff(src_edges)[None, :]


def remap_mass(values, src: CellGrid, dst: CellGrid):
    """Conservative remap of cell densities between aligned uniform grids."""
    out = np.asarray(values, dtype=float) * src.cell_volume
    for axis in range(src.ndim):
        a = remap_matrix(src.edges(axis), dst.edges(axis))
        out = np.moveaxis(np.tensordot(a, np.moveaxis(out, axis, 0), axes=(1, 0)), 0, axis)
    return out / dst.cell_volume


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Node lattice over a box times a time window ``(t0, t1]``."""

    lo: tuple
    hi: tuple
    nx: tuple
    t1: float
    nt: int
    t0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        nx = self.nx
        if np.isscalar(nx):
            nx = (int(nx),) * len(self.lo)
        object.__setattr__(self, "nx", tuple(int(v) for v in nx))
        if len(self.nx) != len(self.lo):
            raise ValueError("nx must have one entry per spatial axis")
        if self.t1 <= self.t0 or self.nt < 1:
            raise ValueError("need t1 > t0 and nt >= 1")

    @classmethod
    def for_domain(cls, domain, nx, nt):
        lo, hi = domain.bounding_box()
        return cls(lo, hi, nx, domain.T, nt)

    @property
    def N(self):
        return len(self.lo)

    @property
    def dt(self):
        return (self.t1 - self.t0) / self.nt

    @property
    def shape(self):
        return self.nx + (self.nt,)

    @property
    def spatial_cells(self):
        return CellGrid(self.lo, self.hi, self.nx)

    @property
    def cells(self):
        return CellGrid(self.lo + (self.t0,), self.hi + (self.t1,), self.shape)

    def x_axes(self):
        return [self.spatial_cells.centers(a) for a in range(self.N)]

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(1, self.nt + 1)

    def spatial_points(self):
        mesh = np.meshgrid(*self.x_axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def nodes(self):
        """All nodes as ``(points (M, N), times (M,))`` in C order of ``shape``."""
        pts = self.spatial_points()
        t = self.times
        return np.repeat(pts, len(t), axis=0), np.tile(t, len(pts))

    @property
    def node_volume(self):
        return self.spatial_cells.cell_volume * self.dt


def parse_grid_spec(text, n_spatial):
    """Parse ``"64x64x32"`` into ``(nx tuple, nt)``; a single number is broadcast."""
    parts = [int(p) for p in str(text).lower().split("x") if p]
    if len(parts) == 1:
        return (parts[0],) * n_spatial, parts[0]
    if len(parts) == 2 and n_spatial > 1:
        return (parts[0],) * n_spatial, parts[1]
    if len(parts) != n_spatial + 1:
        raise ValueError(f"grid spec {text!r} needs {n_spatial + 1} entries")
    return tuple(parts[:-1]), parts[-1]
