"""Linear, absorption and source problems on a box with zero Dirichlet data.

Two independent discretizations are used:

* the Green representation (exact images/modes, see :mod:`parapot.kernels`)
  evaluated on the raw measure data, and
* a cell-centred finite-difference march on smoothed data.  The discrete
  Laplacian is diagonal in the DST-II basis, so each linear step is the exact
  matrix exponential (a positive, mass-nonincreasing operator).  Absorption
  enters through an implicit per-node solve after each linear step.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import fft as sfft

from . import constants as C
from .grids import CellGrid, SpaceTimeGrid
from .kernels import GreenConfig, apply_G, duhamel
from .measures import (CellDensity, Domain, SpaceTimeMeasure, SpatialMeasure, crop_density,
                       mollify_spacetime, mollify_spatial, spacetime_from_json, spacetime_to_json,
                       spatial_from_json, spatial_to_json)
from .nonlinearity import ExpNonlinearity, g_ell
from .potentials import PotentialField, PotentialParams
from .potentials import field as potential_field

KINDS = ("linear", "absorption", "source")


class SolverError(RuntimeError):
    """Base class for solver failures."""


class NewtonError(SolverError):
    """The per-node implicit absorption solve did not converge."""


class CrossValidationError(SolverError):
    """Finite-difference and Green-representation solutions disagree."""


class BlowupError(SolverError):
    """A Picard iterate overflowed."""


class EnvelopeViolation(SolverError):
    """A Picard iterate left the a-priori envelope."""

    def __init__(self, msg, node=None, value=None, bound=None, iteration=None):
        super().__init__(msg)
        self.node, self.value, self.bound, self.iteration = node, value, bound, iteration


@dataclass(frozen=True)
class SolverParams:
    """Scheme controls.

    ``n0`` is the coarsest smoothing index (kernel radius ``1/n``); ``None``
    picks the largest value for which the finest level still spans two cells.
    """

    n0: int | None = None
    levels: int = 3
    kernel: str = "bump"
    k0: float = 1.0
    k_factor: float = 2.0
    cauchy_rtol: float = 1e-3
    newton_tol: float = 1e-13
    newton_maxiter: int = 200
    picard_tol: float = 1e-6
    picard_maxiter: int = 50
    xval_rtol: float = 2e-2
    mass_slack: float = 1.01
    alpha: float | None = None
    beta: float | None = None
    delta: float = 1.0
    c30: float | None = None
    probe: int = 16
    check_thresholds: bool = True
    green: GreenConfig = GreenConfig()

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        if "green" in d:
            d["green"] = GreenConfig.from_dict(d["green"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown solver parameter(s): {sorted(unknown)}")
        return cls(**d)


def _reassign_initial_atoms(omega: SpatialMeasure, mu: SpaceTimeMeasure, tol=1e-12):
    """Atoms of ``mu`` at ``t = 0`` belong to the initial datum."""
    at0 = np.abs(mu.times) <= tol
    if not np.any(at0):
        return omega, mu
    keep = ~at0
    om = SpatialMeasure(omega.N, np.vstack([omega.points, mu.points[at0]]),
                        np.concatenate([omega.weights, mu.weights[at0]]), omega.density)
    m = SpaceTimeMeasure(mu.N, mu.points[keep], mu.times[keep], mu.weights[keep], mu.density, mu.tensor)
    return om, m


@dataclass
class ProblemSpec:
    """Box domain, nonlinearity, problem kind, data and discretization.

    ``f1`` (shape ``nx``) and ``f2`` (shape ``nx + (nt,)``) are integrable
    perturbations given as cell values on the solve grid; absorption only.
    """

    domain: Domain
    kind: str = "linear"
    nonlinearity: ExpNonlinearity = ExpNonlinearity()
    omega: SpatialMeasure | None = None
    mu: SpaceTimeMeasure | None = None
    f1: np.ndarray | None = None
    f2: np.ndarray | None = None
    nx: tuple | int = 32
    nt: int = 32
    params: SolverParams = SolverParams()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.domain.kind != "box":
            raise ValueError("solvers support box domains only")
        N = self.domain.N
        if np.isscalar(self.nx):
            self.nx = (int(self.nx),) * N
        self.nx = tuple(int(v) for v in self.nx)
        self.omega = SpatialMeasure.zero(N) if self.omega is None else self.omega
        self.mu = SpaceTimeMeasure.zero(N) if self.mu is None else self.mu
        if self.omega.N != N or self.mu.N != N:
            raise ValueError("data dimension does not match the domain")
        self.omega, self.mu = _reassign_initial_atoms(self.omega, self.mu)
        for name, arr, shape in (("f1", self.f1, self.nx), ("f2", self.f2, self.nx + (self.nt,))):
            if arr is None:
                continue
            if self.kind != "absorption":
                raise ValueError(f"{name} is accepted for absorption problems only")
            arr = np.asarray(arr, float)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            setattr(self, name, arr)
        if self.kind == "source":
            if not (self.omega.is_nonnegative() and self.mu.is_nonnegative()):
                raise ValueError("source problems need nonnegative data")
            ExpNonlinearity.for_source(self.nonlinearity.a, self.nonlinearity.q, self.nonlinearity.ell)

    @property
    def N(self):
        return self.domain.N

    @property
    def grid(self):
        return SpaceTimeGrid.for_domain(self.domain, self.nx, self.nt)

    @property
    def alpha(self):
        return self.params.alpha if self.params.alpha is not None else max(1.0, self.nonlinearity.q)

    @property
    def beta(self):
        if self.params.beta is not None:
            return self.params.beta
        q = self.nonlinearity.q
        return (q - 1.0) / q

    def data_mass(self):
        """``|omega| + |mu| + ||f1||_1 + ||f2||_1``."""
        g = self.grid
        m = self.omega.variation + self.mu.variation
        if self.f1 is not None:
            m += float(np.abs(self.f1).sum()) * g.spatial_cells.cell_volume
        if self.f2 is not None:
            m += float(np.abs(self.f2).sum()) * g.node_volume
        return m

    def is_zero(self):
        fz = all(a is None or not np.any(a) for a in (self.f1, self.f2))
        return self.omega.is_zero and self.mu.is_zero and fz

    def with_(self, **kw):
        return replace(self, **kw)

    @classmethod
    def from_dict(cls, d):
        domain = Domain.from_dict(d["domain"])
        N = domain.N
        kind = d.get("kind", "linear")
        nl = ExpNonlinearity.from_dict(d.get("nonlinearity", {}))
        omega = spatial_from_json(d["omega"], N, domain) if d.get("omega") else None
        mu = spacetime_from_json(d["mu"], N, domain) if d.get("mu") else None
        nx, nt = d.get("nx", 32), int(d.get("nt", 32))
        if "grid" in d:
            from .grids import parse_grid_spec

            nx, nt = parse_grid_spec(d["grid"], N)
        nxt = (int(nx),) * N if np.isscalar(nx) else tuple(int(v) for v in nx)
        f1 = np.asarray(d["f1"], float).reshape(nxt) if d.get("f1") is not None else None
        f2 = np.asarray(d["f2"], float).reshape(nxt + (nt,)) if d.get("f2") is not None else None
        return cls(domain, kind, nl, omega, mu, f1, f2, nxt, nt, SolverParams.from_dict(d.get("params")))

    def to_dict(self):
        out = {"domain": self.domain.to_dict(), "kind": self.kind,
               "nonlinearity": self.nonlinearity.to_dict(),
               "omega": spatial_to_json(self.omega), "mu": spacetime_to_json(self.mu),
               "nx": list(self.nx), "nt": self.nt}
        if self.f1 is not None:
            out["f1"] = self.f1.ravel().tolist()
        if self.f2 is not None:
            out["f2"] = self.f2.ravel().tolist()
        return out


@dataclass
class Solution:
    """Node values plus everything the scheme learned along the way.

    ``initial`` holds cell values of the initial datum when it is a function
    (used as the ``t = 0`` quadrature node), else ``None``.
    """

    u: PotentialField
    kind: str
    iterates: list = field(default_factory=list)
    report: dict = field(default_factory=dict)
    converged: bool = True
    initial: np.ndarray | None = None

    @property
    def values(self):
        return self.u.values

    def l1(self):
        return float(np.abs(self.u.values).sum() * self.u.grid.node_volume)


# --------------------------------------------------------------------------- discrete heat flow

class DirichletHeat:
    """Cell-centred Dirichlet Laplacian on a box grid, diagonalized by DST-II."""

    def __init__(self, cells: CellGrid):
        self.cells = cells
        self.axes = tuple(range(cells.ndim))
        lam = None
        for a in range(cells.ndim):
            n, h = cells.shape[a], cells.h[a]
            la = (2.0 / h * np.sin(np.arange(1, n + 1) * np.pi / (2 * n))) ** 2
            lam = la if lam is None else np.add.outer(lam, la)
        self.lam = lam

    def fwd(self, u):
        return sfft.dstn(u, type=2, norm="ortho", axes=self.axes)

    def inv(self, U):
        return sfft.idstn(U, type=2, norm="ortho", axes=self.axes)

    def march(self, u0, forcing, dt, absorb=None):
        """Node values at ``t_k = k dt`` for ``u' = Lu + f`` with ``f`` constant on each step.

        ``absorb`` maps the post-diffusion values to the end-of-step values.
        """
        lam = self.lam
        decay = np.exp(-lam * dt)
        gain = -np.expm1(-lam * dt) / lam
        nt = forcing.shape[-1]
        U = self.fwd(np.asarray(u0, float))
        out = np.empty(lam.shape + (nt,))
        if absorb is None:
            Fh = sfft.dstn(forcing, type=2, norm="ortho", axes=self.axes)
            for k in range(nt):
                U = decay * U + gain * Fh[..., k]
                out[..., k] = U
            return sfft.idstn(out, type=2, norm="ortho", axes=self.axes)
        for k in range(nt):
            U = decay * U + gain * self.fwd(forcing[..., k])
            v = absorb(self.inv(U))
            out[..., k] = v
            U = self.fwd(v)
        return out

    def backward_unit_source(self, times, T):
        """``psi`` with ``-psi_t - L psi = 1``, ``psi(T) = 0`` at the given times."""
        one = self.fwd(np.ones(self.cells.shape))
        tau = np.clip(T - np.asarray(times, float), 0.0, None)
        lam = self.lam[..., None]
        Psi = -np.expm1(-lam * tau) / lam * one[..., None]
        return sfft.idstn(Psi, type=2, norm="ortho", axes=self.axes)


def implicit_absorption(ustar, dt, nl: ExpNonlinearity, tol=1e-13, maxiter=200):
    """Solve ``v + dt sign(v) g(v) = u*`` nodewise.

    The left side is odd and strictly increasing, so the root lies between 0 and
    ``u*``.  Newton steps are kept inside the current bracket; a step leaving it
    (or an overflowed evaluation) is replaced by bisection.
    Returns ``(v, iterations)``.
    """
    ustar = np.asarray(ustar, float)
    b = np.abs(ustar).ravel()
    lo = np.zeros_like(b)
    hi = b.copy()
    v = b.copy()
    active = b > 0
    it = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while np.any(active):
            if it >= maxiter:
                raise NewtonError(f"absorption solve did not converge at {int(active.sum())} node(s)")
            it += 1
            va = v[active]
            ba = b[active]
            phi = va + dt * g_ell(va, nl) - ba
            conv = np.abs(phi) <= tol * (1.0 + ba)
            hia = np.where(phi > 0, va, hi[active])
            loa = np.where(phi < 0, va, lo[active])
            step = va - phi / (1.0 + dt * nl.derivative(va))
            bad = ~np.isfinite(step) | (step <= loa) | (step >= hia)
            new = np.where(bad, 0.5 * (loa + hia), step)
            conv |= (hia - loa) <= 4 * np.finfo(float).eps * np.maximum(ba, 1.0)
            new = np.where(conv, va, new)
            v[active], hi[active], lo[active] = new, hia, loa
            idx = np.flatnonzero(active)
            active[idx[conv]] = False
    return np.sign(ustar) * v.reshape(ustar.shape), it


# --------------------------------------------------------------------------- data preparation

def _ladder_n(spec: ProblemSpec):
    p = spec.params
    if p.n0 is not None:
        n0 = int(p.n0)
    else:
        g = spec.grid
        hmax = max(float(np.max(g.spatial_cells.h)), g.dt)
        n_f = int(math.floor(1.0 / (2.0 * hmax) + 1e-9))
        n0 = max(1, n_f // 2 ** (p.levels - 1))
    return [n0 * 2 ** j for j in range(p.levels)]


def _smooth_spatial(m: SpatialMeasure, n, grid: CellGrid, kernel):
    if m.is_zero:
        return np.zeros(grid.shape)
    dens = mollify_spatial(m, n, grid=grid, kernel=kernel, pad=True).density
    return crop_density(dens, grid).values.copy()


def _smooth_spacetime(m: SpaceTimeMeasure, n, grid: CellGrid, kernel):
    if m.is_zero:
        return np.zeros(grid.shape)
    dens = mollify_spacetime(m, n, grid=grid, kernel=kernel, pad=True).density
    return crop_density(dens, grid).values.copy()


def _smoothed_parts(spec: ProblemSpec, n, kernel, k=None):
    """``{+1: (w0, F), -1: (w0, F)}``: smoothed Jordan parts as cell data."""
    g = spec.grid
    sc, cells = g.spatial_cells, g.cells
    out = {}
    for sign in (1, -1):
        om = spec.omega.positive_part() if sign > 0 else spec.omega.negative_part()
        mu = spec.mu.positive_part() if sign > 0 else spec.mu.negative_part()
        w0 = _smooth_spatial(om, n, sc, kernel)
        F = _smooth_spacetime(mu, n, cells, kernel)
        if k is not None and spec.f1 is not None:
            f = np.minimum(np.clip(sign * spec.f1, 0.0, None), k)
            w0 += _smooth_spatial(SpatialMeasure.from_density(sc, f), n, sc, kernel)
        if k is not None and spec.f2 is not None:
            f = np.minimum(np.clip(sign * spec.f2, 0.0, None), k)
            F += _smooth_spacetime(SpaceTimeMeasure.from_density(cells, f), n, cells, kernel)
        out[sign] = (w0, F)
    return out


def _initial_cells(spec: ProblemSpec):
    om = spec.omega
    sc = spec.grid.spatial_cells
    if om.has_atoms:
        return None
    if om.density is None:
        return np.zeros(sc.shape)
    return crop_density(om.density, sc).values.copy()


def _l1(values, grid: SpaceTimeGrid):
    return float(np.abs(values).sum() * grid.node_volume)


# --------------------------------------------------------------------------- admissibility

def probe_sup(kind, measure, domain: Domain, p: PotentialParams, probe=16):
    """Probe estimate of ``||M||_inf`` for a nonnegative measure (``inf`` with atoms)."""
    if measure.is_zero:
        return 0.0
    if measure.has_atoms and np.any(measure.weights > 0):
        return math.inf
    if kind == "max2" and measure.tensor is not None and measure.tensor[0].has_atoms:
        probe = min(probe, 8)
    g = SpaceTimeGrid.for_domain(domain, probe, probe)
    return potential_field(kind, measure, g, p).sup()


def _threshold_report(spec: ProblemSpec, m1, m2, label):
    if not spec.params.check_thresholds:
        return {"checked": False}
    p = PotentialParams(alpha=spec.alpha, beta=spec.beta, R=math.inf, d=spec.domain.d)
    rep = {"checked": True, "M1": m1, "M2": m2, "label": label, "alpha": spec.alpha, "beta": spec.beta}
    ok = True
    for name, kind, m, bound in (("omega", "max1", spec.omega, m1), ("mu", "max2", spec.mu, m2)):
        for sgn, part in (("+", m.positive_part()), ("-", m.negative_part())):
            v = probe_sup(kind, part, spec.domain, p, spec.params.probe)
            rep[f"{kind}[{name}{sgn}]"] = v
            ok &= v <= bound
    rep["admissible"] = bool(ok)
    if not ok:
        warnings.warn(f"data exceed the {label} admissibility thresholds (sufficient condition only); "
                      "proceeding", stacklevel=3)
    return rep


# --------------------------------------------------------------------------- linear

def green_solution(spec: ProblemSpec):
    """``G[omega] + D[mu]`` on the raw data at every node."""
    g = spec.grid
    cfg = spec.params.green
    u = apply_G(spec.omega, g, spec.domain, cfg).values
    if not spec.mu.is_zero:
        u = u + duhamel(spec.mu, g, spec.domain, cfg).values
    return u


def solve_linear(spec: ProblemSpec) -> Solution:
    """Green representation of the linear problem, cross-checked against the
    finite-difference march on smoothed data."""
    if spec.kind != "linear":
        raise ValueError("solve_linear needs kind='linear'")
    g = spec.grid
    if spec.is_zero():
        return Solution(PotentialField.zeros(g, "solution"), "linear", report={"zero_data": True},
                        initial=np.zeros(g.nx))
    u = green_solution(spec)
    report = {"zero_data": False}
    # two-method oracle on identical smoothed data
    n_f = _ladder_n(spec)[-1]
    parts = _smoothed_parts(spec, n_f, spec.params.kernel)
    w0 = parts[1][0] - parts[-1][0]
    F = parts[1][1] - parts[-1][1]
    heat = DirichletHeat(g.spatial_cells)
    u_fd = heat.march(w0, F, g.dt)
    sm = SpatialMeasure.from_density(g.spatial_cells, w0)
    smu = SpaceTimeMeasure.from_density(g.cells, F)
    u_ref = apply_G(sm, g, spec.domain, spec.params.green).values
    if np.any(F):
        u_ref = u_ref + duhamel(smu, g, spec.domain, spec.params.green).values
    scale = max(_l1(u_ref, g), 1e-300)
    rel = _l1(u_fd - u_ref, g) / scale
    report["cross_validation"] = {"n": n_f, "relative_l1": rel, "tolerance": spec.params.xval_rtol,
                                  "smoothing_distance": _l1(u_ref - u, g) / max(_l1(u, g), 1e-300)}
    if not rel <= spec.params.xval_rtol:
        raise CrossValidationError(f"finite-difference and Green solutions differ by {rel:.3g} (relative L1)")
    if spec.omega.is_nonnegative() and spec.mu.is_nonnegative():
        report["est1"] = _est1_check(spec, u)
    return Solution(PotentialField(g, u, np.zeros(g.shape, bool), "solution"), "linear",
                    report=report, initial=_initial_cells(spec))


def _wolff_2d(spec: ProblemSpec):
    d = spec.domain.d
    return potential_field("wolff", spec.mu, spec.grid, PotentialParams(R=2 * d, d=d))


def _est1_check(spec: ProblemSpec, u, rtol=1e-8, atol=1e-10):
    """Nodewise ``u <= G[omega] + c20 W_2d[mu]``."""
    g = spec.grid
    G = apply_G(spec.omega, g, spec.domain, spec.params.green).values
    W = _wolff_2d(spec).values if not spec.mu.is_zero else np.zeros(g.shape)
    env = G + C.c20(spec.N) * W
    viol = u > env * (1 + rtol) + atol
    out = {"violations": int(viol.sum()), "nodes": int(viol.size)}
    if viol.any():
        i = np.unravel_index(int(np.argmax(u - env)), g.shape)
        out["worst_node"] = [int(v) for v in i]
    return out


# --------------------------------------------------------------------------- absorption

def _absorbed_march(heat, w0, F, dt, nl, p: SolverParams, stats):
    def absorb(v):
        out, it = implicit_absorption(v, dt, nl, p.newton_tol, p.newton_maxiter)
        stats["newton_max_iter"] = max(stats.get("newton_max_iter", 0), it)
        return out

    return heat.march(w0, F, dt, absorb)


def _relative_deltas(sols, grid):
    if len(sols) < 2:
        return []
    scale = max(_l1(sols[-1], grid), 1e-300)
    return [_l1(b - a, grid) / scale for a, b in zip(sols[:-1], sols[1:])]


def solve_absorption(spec: ProblemSpec) -> Solution:
    """Smoothing ladder (and truncation ladder for ``f1``, ``f2``) for the absorption problem.

    At every level the signed problem, both one-signed absorption problems and
    both linear problems are marched, and the ordering
    ``-v2 <= -u2 <= u <= u1 <= v1`` plus the mass bound on ``g(u)`` are checked.
    """
    if spec.kind != "absorption":
        raise ValueError("solve_absorption needs kind='absorption'")
    g = spec.grid
    nl = spec.nonlinearity
    p = spec.params
    if spec.is_zero():
        return Solution(PotentialField.zeros(g, "solution"), "absorption",
                        report={"zero_data": True, "ladder_tolerance": p.cauchy_rtol,
                                "invariants": {"sandwich": True, "mass_bound": True}},
                        initial=np.zeros(g.nx))
    m1, m2 = C.absorption_thresholds(spec.N, spec.alpha, spec.beta, nl.a)
    report = {"zero_data": False, "thresholds": _threshold_report(spec, m1, m2, "absorption")}
    heat = DirichletHeat(g.spatial_cells)
    dt = g.dt
    ns = _ladder_n(spec)
    has_f = spec.f1 is not None or spec.f2 is not None
    ks = [p.k0 * p.k_factor ** j for j in range(p.levels)] if has_f else [None]
    bound = spec.data_mass()
    vol = g.node_volume
    iterates = []
    grid_sols = {}
    for k in ks:
        for n in ns:
            parts = _smoothed_parts(spec, n, p.kernel, k)
            (w1, F1), (w2, F2) = parts[1], parts[-1]
            stats = {}
            u = _absorbed_march(heat, w1 - w2, F1 - F2, dt, nl, p, stats)
            u1 = _absorbed_march(heat, w1, F1, dt, nl, p, stats)
            u2 = _absorbed_march(heat, w2, F2, dt, nl, p, stats)
            v1 = heat.march(w1, F1, dt)
            v2 = heat.march(w2, F2, dt)
            scale = max(np.abs(v1).max(), np.abs(v2).max(), 1.0)
            tol = 1e-10 * scale
            chain = [-v2, -u2, u, u1, v1]
            worst = max(float(np.max(a - b)) for a, b in zip(chain[:-1], chain[1:]))
            mass = float(g_ell(u, nl).sum() * vol)
            mass1 = float(g_ell(u1, nl).sum() * vol)
            mass2 = float(g_ell(u2, nl).sum() * vol)
            it = {"n": n, "k": k, "l1": _l1(u, g), "mass_g": mass, "mass_g_plus": mass1,
                  "mass_g_minus": mass2, "mass_bound": bound,
                  "mass_ratio": mass / bound if bound > 0 else 0.0,
                  "mass_ok": bool(mass <= p.mass_slack * bound and mass1 + mass2 <= p.mass_slack * bound),
                  "sandwich_ok": bool(worst <= tol), "sandwich_worst": worst,
                  "newton_max_iter": stats.get("newton_max_iter", 0)}
            iterates.append(it)
            grid_sols[(k, n)] = u
    k_last, n_last = ks[-1], ns[-1]
    dn = _relative_deltas([grid_sols[(k_last, n)] for n in ns], g)
    dk = _relative_deltas([grid_sols[(k, n_last)] for k in ks], g) if has_f else []
    flags = []
    if spec.mu.has_atoms and 1.0 / ns[0] > spec.domain.T / math.e:
        # time smearing of a space-time atom changes ||u||_1 by ~ r log(T/r), which
        # peaks at r = T/e; coarser starting radii give flat leading deltas
        flags.append(f"coarsest mollifier radius {1.0 / ns[0]:.3g} exceeds T/e = {spec.domain.T / math.e:.3g}: "
                     "leading ladder deltas are pre-asymptotic; refine the grid")

    def ladder(deltas, name):
        mono = all(b <= a for a, b in zip(deltas[:-1], deltas[1:]))
        cauchy = bool(deltas) and deltas[-1] <= p.cauchy_rtol
        if deltas and not mono:
            flags.append(f"{name} ladder deltas not decreasing: data likely inadmissible")
        if deltas and not cauchy:
            flags.append(f"{name} ladder last delta {deltas[-1]:.3g} above rtol {p.cauchy_rtol:g}")
        return {"deltas": deltas, "monotone": mono, "cauchy": cauchy}

    report["smoothing_ladder"] = dict(ladder(dn, "smoothing"), n=ns, kernel=p.kernel)
    if has_f:
        report["truncation_ladder"] = dict(ladder(dk, "truncation"), k=ks)
    # the smoothing ladder's own error estimate; used as the uniqueness tolerance
    report["ladder_tolerance"] = max([p.cauchy_rtol] + dn[-1:])
    report["invariants"] = {"sandwich": all(i["sandwich_ok"] for i in iterates),
                            "mass_bound": all(i["mass_ok"] for i in iterates),
                            "ladder_monotone": report["smoothing_ladder"]["monotone"]}
    report["flags"] = flags
    for f in flags:
        warnings.warn(f, stacklevel=2)
    u = grid_sols[(k_last, n_last)]
    return Solution(PotentialField(g, u, np.zeros(g.shape, bool), "solution"), "absorption",
                    iterates=iterates, report=report, initial=_initial_cells(spec))


# --------------------------------------------------------------------------- source

def source_table(spec: ProblemSpec):
    nl = spec.nonlinearity
    return C.build_table(spec.N, spec.alpha, spec.beta, nl.q, nl.ell, nl.a, domain=spec.domain,
                         delta=spec.params.delta, c30=spec.params.c30)


def solve_source_picard(spec: ProblemSpec, table=None) -> Solution:
    """Monotone Picard iteration ``u_{n+1} = G[omega] + D[mu] + D_h[g(u_n)]``.

    ``D_h`` is the discrete exponential Duhamel operator (positive), so the
    iterates are nondecreasing up to roundoff.  Every iterate is checked
    against ``G[omega] + c20 W_2d[mu] + c20 b0``.
    """
    if spec.kind != "source":
        raise ValueError("solve_source_picard needs kind='source'")
    g = spec.grid
    nl = spec.nonlinearity
    p = spec.params
    table = source_table(spec) if table is None else table
    c20, b0 = table["c20"], table["b0"]
    report = {"thresholds": _threshold_report(spec, table["M1_src"], table["M2_src"], "source"),
              "c20": c20, "b0": b0}
    G = apply_G(spec.omega, g, spec.domain, p.green).values
    base = G + (duhamel(spec.mu, g, spec.domain, p.green).values if not spec.mu.is_zero else 0.0)
    W = _wolff_2d(spec).values if not spec.mu.is_zero else np.zeros(g.shape)
    env = G + c20 * W + c20 * b0
    heat = DirichletHeat(g.spatial_cells)
    zero0 = np.zeros(g.nx)
    iterates = []

    def check_env(u, n):
        viol = u > env * (1 + 1e-9) + 1e-12
        if viol.any():
            i = np.unravel_index(int(np.argmax(np.where(viol, u - env, -np.inf))), g.shape)
            pts = [float(g.x_axes()[a][i[a]]) for a in range(g.N)]
            raise EnvelopeViolation(
                f"iterate {n} exceeds the envelope at x={pts}, t={float(g.times[i[-1]]):.6g}: "
                f"{u[i]:.6g} > {env[i]:.6g}", node=[int(v) for v in i], value=float(u[i]),
                bound=float(env[i]), iteration=n)

    u = base
    check_env(u, 0)
    converged = False
    mono_ok = True
    for n in range(1, p.picard_maxiter + 1):
        with np.errstate(over="ignore"):
            gu = g_ell(u, nl)
        if not np.all(np.isfinite(gu)):
            raise BlowupError(f"g(u_{n - 1}) overflowed at {int((~np.isfinite(gu)).sum())} node(s)")
        new = base + heat.march(zero0, gu, g.dt)
        if not np.all(np.isfinite(new)):
            raise BlowupError(f"iterate {n} is not finite")
        scale = max(float(np.abs(new).max()), 1.0)
        drop = float(np.min(new - u))
        mono = drop >= -1e-12 * scale
        mono_ok &= mono
        check_env(new, n)
        delta = float(np.max(np.abs(new - u)))
        iterates.append({"iteration": n, "sup_delta": delta, "l1_delta": _l1(new - u, g),
                         "min_increment": drop, "monotone": bool(mono),
                         "mass_g": float(gu.sum() * g.node_volume)})
        u = new
        if delta < p.picard_tol:
            converged = True
            break
    with np.errstate(over="ignore"):
        gx = g_ell(2.0 * env, nl)
    integral = float(gx.sum() * g.node_volume)
    report["exploc"] = {"finite": bool(np.all(np.isfinite(gx)) and math.isfinite(integral)),
                        "integral": integral}
    report["invariants"] = {"monotone": bool(mono_ok), "envelope": True, "converged": converged}
    if not converged:
        warnings.warn(f"Picard iteration not converged after {p.picard_maxiter} iterations", stacklevel=2)
    return Solution(PotentialField(g, u, np.zeros(g.shape, bool), "solution"), "source",
                    iterates=iterates, report=report, converged=converged, initial=_initial_cells(spec))


def solve(spec: ProblemSpec) -> Solution:
    return {"linear": solve_linear, "absorption": solve_absorption,
            "source": solve_source_picard}[spec.kind](spec)


def exp_integral(sol: Solution, delta, q):
    """Grid integral of ``exp(delta |u|^q)`` over the nodes."""
    with np.errstate(over="ignore"):
        v = np.exp(delta * np.abs(sol.values) ** q)
    return float(v.sum() * sol.u.grid.node_volume)


# --------------------------------------------------------------------------- weak form

def default_test_family(N, max_mode=2, powers=(2, 3)):
    import itertools

    return [{"modes": m, "p": pw, "c": 1.0}
            for m in itertools.product(range(1, max_mode + 1), repeat=N) for pw in powers]


def _sin_cell_integral(m, a, b, lo, L):
    k = m * np.pi / L
    return (np.cos(k * (a - lo)) - np.cos(k * (b - lo))) / k


def _phi(points, modes, domain):
    out = np.ones(len(points))
    for a in range(domain.N):
        L, lo = domain.edges[a], domain.lo[a]
        out *= np.sin(modes[a] * np.pi * (points[:, a] - lo) / L)
    return out


def _pow_integral(T, a, b, p):
    a = np.clip(a, 0.0, T)
    b = np.clip(b, 0.0, T)
    return ((T - a) ** (p + 1) - (T - b) ** (p + 1)) / (p + 1)


def weak_residual(sol: Solution, spec: ProblemSpec, family=None):
    """Defect of the very weak formulation against ``zeta = c prod sin(m_a pi x_a / L_a) (T - t)^p``.

    Space integrals use the cell-centre rule, time integrals the trapezoid
    rule (the first interval uses its right end when the initial datum is not a
    function).  Returns ``(rows, max_abs_residual)``.
    """
    g = sol.u.grid
    dom = spec.domain
    T = dom.T
    nl = spec.nonlinearity
    family = default_test_family(g.N) if family is None else family
    u = sol.values
    if sol.kind == "absorption":
        fu = nl.signed(u)
        f0 = nl.signed(sol.initial) if sol.initial is not None else None
    elif sol.kind == "source":
        fu = -g_ell(u, nl)
        f0 = -g_ell(sol.initial, nl) if sol.initial is not None else None
    else:
        fu = np.zeros_like(u)
        f0 = np.zeros(g.nx) if sol.initial is not None else None
    pts = g.spatial_points()
    ts = np.concatenate([[g.t0], g.times])
    w = np.full(len(ts), g.dt)
    w[0] = w[-1] = 0.5 * g.dt
    if sol.initial is None:
        w[1] += 0.5 * g.dt  # right-end rule on the first interval
        w[0] = 0.0
    vol = g.spatial_cells.cell_volume
    rows = []
    mu = spec.mu
    for z in family:
        m = tuple(int(v) for v in z["modes"])
        p = float(z["p"])
        c = float(z.get("c", 1.0))
        lam = sum((mm * np.pi / L) ** 2 for mm, L in zip(m, dom.edges))
        phi = _phi(pts, m, dom).reshape(g.nx)
        tau = T - ts
        A = -p * tau ** (p - 1) - lam * tau ** p  # zeta_t + Lap zeta = phi A
        Bt = tau ** p
        su = np.tensordot(u, phi, axes=(tuple(range(g.N)), tuple(range(g.N)))) * vol
        sf = np.tensordot(fu, phi, axes=(tuple(range(g.N)), tuple(range(g.N)))) * vol
        s0u = float(np.sum(sol.initial * phi) * vol) if sol.initial is not None else 0.0
        s0f = float(np.sum(f0 * phi) * vol) if f0 is not None else 0.0
        su = np.concatenate([[s0u], su])
        sf = np.concatenate([[s0f], sf])
        u_term = -c * float(np.sum(w * su * A))
        f_term = c * float(np.sum(w * sf * Bt))
        # data pairings
        mu_term = 0.0
        if mu.has_atoms:
            mu_term += float(np.sum(mu.weights * _phi(mu.points, m, dom) * (T - mu.times) ** p))
        if mu.density is not None:
            e = np.asarray(mu.density.grid.edges(g.N))
            tw = _pow_integral(T, e[:-1], e[1:], p)
            mu_term += _density_pairing(mu.density, m, dom, tw)
        if mu.tensor is not None:
            lam_m, theta = mu.tensor
            sp = _spatial_pairing(lam_m, m, dom)
            tt = float(np.sum(theta.values * _pow_integral(T, theta.edges[:-1], theta.edges[1:], p)))
            mu_term += sp * tt
        om_term = _spatial_pairing(spec.omega, m, dom) * T ** p
        mu_term *= c
        om_term *= c
        res = u_term + f_term - mu_term - om_term
        rows.append({"modes": list(m), "p": p, "c": c, "residual": res,
                     "scale": abs(u_term) + abs(f_term) + abs(mu_term) + abs(om_term)})
    mx = max((abs(r["residual"]) for r in rows), default=0.0)
    return rows, mx


def _spatial_pairing(om: SpatialMeasure, m, dom):
    s = 0.0
    if om.has_atoms:
        s += float(np.sum(om.weights * _phi(om.points, m, dom)))
    if om.density is not None:
        s += _density_pairing(om.density, m, dom, None)
    return s


def _density_pairing(dens: CellDensity, m, dom, tw):
    vals = dens.values
    g = dens.grid
    for a in range(dom.N):
        e = np.asarray(g.edges(a))
        lo, L = dom.lo[a], dom.edges[a]
        ia = _sin_cell_integral(m[a], np.clip(e[:-1], lo, lo + L), np.clip(e[1:], lo, lo + L), lo, L)
        vals = np.tensordot(ia, vals, axes=(0, 0))
    return float(vals) if tw is None else float(np.dot(tw, vals))


# --------------------------------------------------------------------------- uniqueness

def check_uniqueness(s1: Solution, s2: Solution, spec: ProblemSpec, tol=None):
    """``psi``-weighted L1 gap with ``-psi_t - L psi = 1``, ``psi(T) = 0``.

    The default tolerance is five times the larger ladder tolerance of the two
    solutions.  The verdict is ``'coincide'`` iff the relative gap is below it.
    """
    g1, g2 = s1.u.grid, s2.u.grid
    if g1 != g2:
        raise ValueError("solutions live on different grids")
    g = g1
    if tol is None:
        lt = [s.report.get("ladder_tolerance", spec.params.cauchy_rtol) for s in (s1, s2)]
        tol = 5.0 * max(lt)
    heat = DirichletHeat(g.spatial_cells)
    psi = heat.backward_unit_source(g.times, spec.domain.T)
    vol = g.node_volume
    gap = float(np.sum(psi * np.abs(s1.values - s2.values)) * vol)
    size = float(np.sum(psi * 0.5 * (np.abs(s1.values) + np.abs(s2.values))) * vol)
    rel = gap / size if size > 0 else (0.0 if gap == 0 else math.inf)
    return {"verdict": "coincide" if rel <= tol else "distinct", "weighted_gap": gap,
            "relative_gap": rel, "tolerance": tol}
