"""Heat kernel, Dirichlet Green function of a box, and the operators built on them.

The box Green function is a product of one-dimensional factors, each given
either by an alternating sum of image sources (fast for small times) or by the
sine eigen-series (fast for large times).
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .grids import SpaceTimeGrid, remap_matrix
from .measures import Domain, SpaceTimeMeasure, SpatialMeasure
from .potentials import PotentialField


class TruncationError(RuntimeError):
    """The retained images or modes do not reach the requested tolerance."""


def gauss(x, t):
    """Whole-space heat kernel ``(4 pi t)^{-N/2} exp(-|x|^2 / 4t)``; zero for ``t <= 0``.

    ``x`` has shape ``(..., N)``; ``t`` broadcasts against ``x[..., 0]``.
    """
    x = np.asarray(x, float)
    if x.ndim == 0:
        x = x[None]
    N = x.shape[-1]
    t = np.asarray(t, float)
    r2 = np.sum(x * x, axis=-1)
    pos = t > 0
    ts = np.where(pos, t, 1.0)
    val = (4 * np.pi * ts) ** (-N / 2) * np.exp(-r2 / (4 * ts))
    out = np.where(pos, val, 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class GreenConfig:
    """Evaluation method and truncation for the box Green function.

    ``method`` is ``'auto'`` (images below ``t_switch``, modes above),
    ``'reflections'`` or ``'eigen'``.  ``t_switch`` defaults to
    ``(min edge)^2 / (4 pi^2)``.
    """

    method: str = "auto"
    images: int = 5
    modes: int = 64
    eps: float = 1e-10
    t_switch: float | None = None

    def __post_init__(self):
        if self.method not in ("auto", "reflections", "eigen"):
            raise ValueError(f"unknown Green method {self.method!r}")
        if self.images < 1 or self.modes < 1:
            raise ValueError("truncation must be >= 1")

    def switch(self, edges):
        return self.t_switch if self.t_switch is not None else float(np.min(edges)) ** 2 / (4 * np.pi ** 2)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in ("method", "images", "modes", "eps", "t_switch") if k in d})


def _g1(xi, t):
    return np.exp(-xi * xi / (4 * t)) / np.sqrt(4 * np.pi * t)


def _reflect_bound(L, t, K):
    # every image with |k| = K sits at least (2K - 1) L away
    return 2.0 * _g1((2 * K - 1) * L, t)


def _eigen_bound(L, t, M):
    # size of the last retained mode
    return (2.0 / L) * math.exp(-((M * math.pi / L) ** 2) * t)


def check_truncation(L, t, cfg: GreenConfig, method):
    t = float(t)
    if method == "reflections":
        b = _reflect_bound(L, t, cfg.images)
    else:
        b = _eigen_bound(L, t, cfg.modes)
    if b > cfg.eps:
        raise TruncationError(f"{method} truncation bound {b:.3g} exceeds {cfg.eps:g} at t={t:g}, L={L:g}")


def green1d_reflect(x, y, t, L, K):
    """``sum_{|k|<=K} g(x - y + 2kL) - g(x + y + 2kL)`` on ``[0, L]`` (broadcasting)."""
    out = 0.0
    for k in range(-K, K + 1):
        out = out + _g1(x - y + 2 * k * L, t) - _g1(x + y + 2 * k * L, t)
    return out


def green1d_eigen(x, y, t, L, M):
    """``sum_{m<=M} (2/L) sin(m pi x / L) sin(m pi y / L) exp(-(m pi / L)^2 t)``."""
    m = np.arange(1, M + 1).reshape((-1,) + (1,) * np.ndim(np.broadcast(x, y, t)))
    k = m * np.pi / L
    return np.sum((2.0 / L) * np.sin(k * x) * np.sin(k * y) * np.exp(-k * k * t), axis=0)


def _factor(x, y, t, L, cfg: GreenConfig):
    """1D Dirichlet factor with per-entry method choice; zero where ``t <= 0``."""
    x, y, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float), np.asarray(t, float))
    out = np.zeros(x.shape)
    pos = t > 0
    if not np.any(pos):
        return out
    ts = cfg.switch([L])
    if cfg.method == "reflections":
        use_r = pos
    elif cfg.method == "eigen":
        use_r = np.zeros_like(pos)
    else:
        use_r = pos & (t < ts)
    use_e = pos & ~use_r
    if np.any(use_r):
        check_truncation(L, t[use_r].max(), cfg, "reflections")
        out[use_r] = green1d_reflect(x[use_r], y[use_r], t[use_r], L, cfg.images)
    if np.any(use_e):
        check_truncation(L, t[use_e].min(), cfg, "eigen")
        out[use_e] = green1d_eigen(x[use_e], y[use_e], t[use_e], L, cfg.modes)
    return out


def _local(domain: Domain, x, axis):
    return np.asarray(x, float) - domain.lo[axis]


def _require_box(domain):
    if domain.kind != "box":
        raise ValueError("Green functions are implemented for box domains only")


def green_box(x, t, y, domain: Domain, cfg: GreenConfig = GreenConfig()):
    """Dirichlet heat kernel ``G(x, t, y)`` of the box; arrays broadcast over leading axes."""
    _require_box(domain)
    x = np.atleast_1d(np.asarray(x, float))
    y = np.atleast_1d(np.asarray(y, float))
    out = 1.0
    for a, L in enumerate(domain.edges):
        out = out * _factor(_local(domain, x[..., a], a), _local(domain, y[..., a], a), t, L, cfg)
    out = np.asarray(out)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------- cell integrals

def _cell_reflect(x, c0, c1, t, L, K):
    """``int_{c0}^{c1}`` of the image-sum factor in ``y``."""
    s = 2 * np.sqrt(t)
    out = 0.0
    for k in range(-K, K + 1):
        sh = 2 * k * L
        out = out + 0.5 * (erf((x - c0 + sh) / s) - erf((x - c1 + sh) / s))
        out = out - 0.5 * (erf((x + c1 + sh) / s) - erf((x + c0 + sh) / s))
    return out


def _cell_whole(x, c0, c1, t):
    s = 2 * np.sqrt(t)
    return 0.5 * (erf((x - c0) / s) - erf((x - c1) / s))


def _sine_cell(m, c0, c1, L):
    """``int_{c0}^{c1} sin(m pi y / L) dy`` for arrays ``m`` (modes) x cells."""
    k = m * np.pi / L
    return (np.cos(k * c0) - np.cos(k * c1)) / k


def _cell_factor(x, c0, c1, t, L, cfg: GreenConfig, whole=False):
    """Matrix ``[i, c, k]``: cell integral of the 1D factor at node ``x_i``, time ``t_k``."""
    X = x[:, None, None]
    A = c0[None, :, None]
    B = c1[None, :, None]
    T = t[None, None, :]
    if whole:
        return _cell_whole(X, A, B, T)
    ts = cfg.switch([L])
    out = np.zeros((len(x), len(c0), len(t)))
    if cfg.method == "reflections":
        rmask = np.ones(len(t), bool)
    elif cfg.method == "eigen":
        rmask = np.zeros(len(t), bool)
    else:
        rmask = t < ts
    if np.any(rmask):
        check_truncation(L, t[rmask].max(), cfg, "reflections")
        out[:, :, rmask] = _cell_reflect(X, A, B, T[..., rmask], L, cfg.images)
    if np.any(~rmask):
        te = t[~rmask]
        check_truncation(L, te.min(), cfg, "eigen")
        m = np.arange(1, cfg.modes + 1)
        k = m * np.pi / L
        S = _sine_cell(m[:, None], c0[None, :], c1[None, :], L)  # (M, C)
        Phi = (2.0 / L) * np.sin(k[None, :] * x[:, None])  # (n, M)
        E = np.exp(-np.outer(k * k, te))  # (M, K)
        out[:, :, ~rmask] = np.einsum("im,mc,mk->ick", Phi, S, E)
    return out


def _contract(factors, weights, n_spatial):
    """``sum_j w_j prod_a F_a[i_a, j, k]`` (or over cell multi-index for densities)."""
    letters = string.ascii_lowercase
    out_idx = letters[:n_spatial]
    subs = [f"{out_idx[a]}zk" for a in range(n_spatial)]
    return np.einsum(",".join(subs) + ",z->" + out_idx + "k", *factors, weights, optimize=True)


def _contract_density(factors, values, n_spatial):
    letters = string.ascii_lowercase
    out_idx = letters[:n_spatial]
    cell_idx = letters[n_spatial:2 * n_spatial]
    subs = [f"{out_idx[a]}{cell_idx[a]}k" for a in range(n_spatial)]
    return np.einsum(",".join(subs) + "," + cell_idx + "->" + out_idx + "k", *factors, values, optimize=True)


def _grid_in_box(grid: SpaceTimeGrid, domain: Domain):
    lo, hi = np.asarray(domain.lo), np.asarray(domain.hi)
    return np.all(np.asarray(grid.lo) >= lo - 1e-12) and np.all(np.asarray(grid.hi) <= hi + 1e-12)


def apply_G(omega: SpatialMeasure, grid: SpaceTimeGrid, domain: Domain, cfg: GreenConfig = GreenConfig(),
            whole_space=False, atom_chunk=2048):
    """``G[omega](x, t) = int G(x, t, y) d omega(y)`` at every node of ``grid``.

    Atoms are summed exactly; a cell density is integrated exactly over each
    cell (error functions or sine integrals), clipped to the box.  With
    ``whole_space=True`` the free heat kernel replaces the box Green function.
    """
    _require_box(domain)
    if not _grid_in_box(grid, domain):
        raise ValueError("evaluation grid must lie inside the box")
    N = grid.N
    ts = grid.times
    out = np.zeros(grid.shape)
    xa = grid.x_axes()
    if omega.has_atoms:
        for j0 in range(0, len(omega.weights), atom_chunk):
            P = omega.points[j0:j0 + atom_chunk]
            w = omega.weights[j0:j0 + atom_chunk]
            facs = []
            for a in range(N):
                X = xa[a][:, None, None]
                Y = P[None, :, a][..., None]
                T = ts[None, None, :]
                if whole_space:
                    facs.append(_g1(X - Y, T) * np.ones_like(X - Y))
                else:
                    L = domain.edges[a]
                    facs.append(_factor(X - domain.lo[a], Y - domain.lo[a], T, L, cfg))
            out += _contract(facs, w, N)
    if omega.density is not None and np.any(omega.density.values):
        g = omega.density.grid
        facs = []
        for a in range(N):
            e = np.asarray(g.edges(a))
            if whole_space:
                facs.append(_cell_factor(xa[a], e[:-1], e[1:], ts, None, cfg, whole=True))
            else:
                lo_a, L = domain.lo[a], domain.edges[a]
                c0 = np.clip(e[:-1] - lo_a, 0.0, L)
                c1 = np.clip(e[1:] - lo_a, 0.0, L)
                facs.append(_cell_factor(xa[a] - lo_a, c0, c1, ts, L, cfg))
        out += _contract_density(facs, omega.density.values, N)
    return PotentialField(grid, out, np.zeros(grid.shape, bool), "green")


def duhamel(mu: SpaceTimeMeasure, grid: SpaceTimeGrid, domain: Domain, cfg: GreenConfig = GreenConfig(),
            modes=None, atom_chunk=512):
    """``int_{tau < t} G(x, t - tau, y) d mu(y, tau)`` at every node.

    Atoms are exact.  Densities (and tensor parts, discretized on the node time
    cells) use the sine expansion with ``modes`` terms per axis (default
    ``max(64, 4 n_x)``) and the exact time recurrence for piecewise-constant
    forcing.
    """
    _require_box(domain)
    if not _grid_in_box(grid, domain):
        raise ValueError("evaluation grid must lie inside the box")
    N = grid.N
    ts = grid.times
    out = np.zeros(grid.shape)
    xa = grid.x_axes()
    parts = [mu]
    if mu.tensor is not None:
        tedges = np.concatenate([[grid.t0], ts])
        disc = SpaceTimeMeasure(mu.N, tensor=mu.tensor).discretize_tensor(tedges)
        parts = [SpaceTimeMeasure(mu.N, mu.points, mu.times, mu.weights, mu.density), disc]
    for part in parts:
        if part.has_atoms:
            for j0 in range(0, len(part.weights), atom_chunk):
                P = part.points[j0:j0 + atom_chunk]
                tau = part.times[j0:j0 + atom_chunk]
                w = part.weights[j0:j0 + atom_chunk]
                S = ts[None, :] - tau[:, None]  # (J, K)
                facs = []
                for a in range(N):
                    L = domain.edges[a]
                    X = xa[a][:, None, None] - domain.lo[a]
                    Y = P[None, :, a][..., None] - domain.lo[a]
                    facs.append(_factor(X, Y, S[None, :, :], L, cfg))
                out += _contract(facs, w, N)
        if part.density is not None and np.any(part.density.values):
            out += _duhamel_density(part.density, grid, domain, modes)
    return PotentialField(grid, out, np.zeros(grid.shape, bool), "solution")


def _duhamel_density(dens, grid: SpaceTimeGrid, domain: Domain, modes=None):
    N = grid.N
    g = dens.grid
    M = modes or max(64, 4 * max(grid.nx))
    m = np.arange(1, M + 1)
    # spatial projections onto sin modes, clipped to the box
    coef = dens.values
    lam_axes = []
    phi_axes = []
    for a in range(N):
        L, lo_a = domain.edges[a], domain.lo[a]
        e = np.asarray(g.edges(a))
        c0 = np.clip(e[:-1] - lo_a, 0.0, L)
        c1 = np.clip(e[1:] - lo_a, 0.0, L)
        S = (2.0 / L) * _sine_cell(m[:, None], c0[None, :], c1[None, :], L)  # (M, C)
        coef = np.tensordot(S, coef, axes=(1, a))  # mode axis to front
        coef = np.moveaxis(coef, 0, a)
        k = m * np.pi / L
        lam_axes.append(k * k)
        phi_axes.append(np.sin(k[None, :] * (grid.x_axes()[a][:, None] - lo_a)))
    # remap density time cells onto the node time cells [t_{k-1}, t_k]
    node_edges = np.concatenate([[grid.t0], grid.times])
    A = remap_matrix(np.asarray(g.edges(N)), node_edges)  # fraction of src cell in dst cell
    w_src = np.diff(np.asarray(g.edges(N)))
    w_dst = np.diff(node_edges)
    # density value on dst cell = sum_src rho_src |src cap dst| / |dst|
    Tm = A * w_src[None, :] / w_dst[:, None]
    coef = np.tensordot(coef, Tm, axes=([N], [1]))  # (..modes.., K)
    lam = lam_axes[0]
    for a in range(1, N):
        lam = np.add.outer(lam, lam_axes[a])
    dt = grid.dt
    decay = np.exp(-lam * dt)
    gain = -np.expm1(-lam * dt) / lam
    U = np.zeros(lam.shape)
    hist = np.empty(lam.shape + (grid.nt,))
    for k in range(grid.nt):
        U = decay * U + gain * coef[..., k]
        hist[..., k] = U
    out = hist
    for a in range(N):
        out = np.tensordot(phi_axes[a], out, axes=(1, a))
        out = np.moveaxis(out, 0, a)
    return out


def time_slice_measure(field: PotentialField, k):
    """Spatial density equal to the field at time level ``k`` (cells = nodes)."""
    from .measures import CellDensity

    g = field.grid.spatial_cells
    return SpatialMeasure(g.ndim, density=CellDensity(g, field.values[..., k]))
