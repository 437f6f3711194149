"""Numerical checks of the level-set, integrability and kernel-side estimates.

Every check returns a JSON-ready dict with a ``status`` in
``PASS | FAIL | INAPPLICABLE | INCONCLUSIVE``, the evidence it was based on and
a note on which parameters the (unknown) constants depend on.
"""

from __future__ import annotations

import math

import numpy as np

from . import constants as C
from ._geometry import box_ball_overlap, interval_overlap
from .grids import CellGrid, SpaceTimeGrid
from .kernels import GreenConfig, apply_G, duhamel
from .measures import CellDensity, Domain, SpaceTimeMeasure, SpatialMeasure
from .potentials import PotentialParams, field, sup_norm

PASS, FAIL, INAPPLICABLE, INCONCLUSIVE = "PASS", "FAIL", "INAPPLICABLE", "INCONCLUSIVE"
OK_STATUSES = (PASS, INAPPLICABLE)


def _report(check, status, **evidence):
    return {"check": check, "status": status, **evidence}


# --------------------------------------------------------------------------- helpers

def cylinder_grid(x, t, s, n, nt=None):
    """Node grid on the bounding box of ``Q_s(x, t)``."""
    x = np.atleast_1d(np.asarray(x, float))
    half = 0.5 * s * s
    return SpaceTimeGrid(tuple(x - s), tuple(x + s), n, t + half, nt or n, t - half)


def _inside_cylinder(grid: SpaceTimeGrid, x, t, s):
    pts, ts = grid.nodes()
    r = np.linalg.norm(pts - np.asarray(x, float), axis=1)
    return ((r <= s) & (np.abs(ts - t) <= 0.5 * s * s)).reshape(grid.shape)


def restrict_to_cylinder(mu: SpaceTimeMeasure, x, t, s, tensor_cells=64):
    """``mu`` restricted to the closed cylinder ``Q_s(x, t)``.

    Atoms are kept or dropped exactly.  A cell density is multiplied by the
    fraction of each cell inside the cylinder (mass exact, shape smeared within
    cut cells).  A tensor part is first discretized on ``tensor_cells`` time
    cells over the cylinder's window.
    """
    x = np.atleast_1d(np.asarray(x, float))
    N = mu.N
    parts = [SpaceTimeMeasure(N, mu.points, mu.times, mu.weights, mu.density)]
    if mu.tensor is not None:
        e = np.linspace(t - 0.5 * s * s, t + 0.5 * s * s, tensor_cells + 1)
        parts.append(SpaceTimeMeasure(N, tensor=mu.tensor).discretize_tensor(e))
    out = SpaceTimeMeasure.zero(N)
    for m in parts:
        keep = np.zeros(len(m.weights), bool)
        if m.has_atoms:
            keep = (np.linalg.norm(m.points - x, axis=1) <= s) & (np.abs(m.times - t) <= 0.5 * s * s)
        dens = None
        if m.density is not None:
            g = m.density.grid
            sg = CellGrid(g.lo[:N], g.hi[:N], g.shape[:N])
            lo, hi = sg.cell_bounds()
            ov = box_ball_overlap(lo, hi, x, s).reshape(sg.shape) / sg.cell_volume
            e = np.asarray(g.edges(N))
            tw = interval_overlap(e[:-1], e[1:], t - 0.5 * s * s, t + 0.5 * s * s) / np.diff(e)
            dens = CellDensity(g, m.density.values * ov[..., None] * tw)
        piece = SpaceTimeMeasure(N, m.points[keep], m.times[keep], m.weights[keep], dens)
        if out.density is not None and piece.density is not None and not out.density.grid.same_as(piece.density.grid):
            # keep the larger density, fold the other into atoms at cell centres
            piece = _density_as_atoms(piece)
        out = out + piece
    return out


def _density_as_atoms(m: SpaceTimeMeasure):
    g = m.density.grid
    cs = [g.centers(a) for a in range(g.ndim)]
    mesh = np.meshgrid(*cs, indexing="ij")
    pts = np.stack([q.ravel() for q in mesh], axis=1)
    w = m.density.values.ravel() * g.cell_volume
    nz = w != 0
    return SpaceTimeMeasure(m.N, np.vstack([m.points, pts[nz, :-1]]),
                            np.concatenate([m.times, pts[nz, -1]]), np.concatenate([m.weights, w[nz]]))


def _support_box(mu: SpaceTimeMeasure):
    """Bounding box ``(lo, hi)`` in space-time of the support (atoms, density cells, tensor)."""
    N = mu.N
    los, his = [], []
    if mu.has_atoms:
        P = np.column_stack([mu.points, mu.times])
        los.append(P.min(axis=0))
        his.append(P.max(axis=0))
    if mu.density is not None and np.any(mu.density.values):
        g = mu.density.grid
        idx = np.nonzero(mu.density.values)
        lo = [g.edges(a)[idx[a].min()] for a in range(N + 1)]
        hi = [g.edges(a)[idx[a].max() + 1] for a in range(N + 1)]
        los.append(np.array(lo))
        his.append(np.array(hi))
    if mu.tensor is not None:
        lam, th = mu.tensor
        nz = np.flatnonzero(th.values)
        if len(nz):
            tl, tu = th.edges[nz.min()], th.edges[nz.max() + 1]
            if lam.has_atoms:
                los.append(np.append(lam.points.min(axis=0), tl))
                his.append(np.append(lam.points.max(axis=0), tu))
            if lam.density is not None:
                g = lam.density.grid
                los.append(np.append(g.lo, tl))
                his.append(np.append(g.hi, tu))
    if not los:
        return None
    return np.min(los, axis=0), np.max(his, axis=0)


# --------------------------------------------------------------------------- level sets

def exp_factor(eps, beta):
    """``exp(-2^{-b/(1-b)} (1-b)^{1/(1-b)} eps^{-1/(1-b)} ln 2)``."""
    q = 1.0 / (1.0 - beta)
    return math.exp(-2.0 ** (-beta * q) * (1 - beta) ** q * eps ** (-q) * math.log(2.0))


def check_levelset_decay(mu: SpaceTimeMeasure, beta, R=math.inf, lambdas=None, eps_ladder=None,
                         grid: SpaceTimeGrid | None = None, r=None, center=None, d=None, n=32, workers=1):
    """Fitted prefactor ``c1(eps) = |{W > 3 lam, M <= eps lam}| / (factor(eps) |{W > lam}|)``.

    Set measures are counted on ``grid`` (default: ``n`` nodes per axis on the
    box of ``Q_{2r}`` around the support).  ``c1(eps)`` is the maximum over the
    admissible ``lambdas``; the check passes iff it is non-increasing as
    ``eps`` descends.  The default ``eps`` ladder starts at twice the smallest
    ratio ``M / lam`` seen on ``{W > 3 lam}`` and halves three times.
    """
    name = "levelset"
    dep = "c1 = c1(N, beta); eps1 = eps1(N, beta, d, r)"
    if not mu.is_nonnegative():
        raise ValueError("level-set decay concerns nonnegative measures")
    if mu.is_zero:
        return _report(name, PASS, reason="zero measure: both sets empty", depends_on=dep)
    N = mu.N
    box = _support_box(mu)
    if center is None:
        xs, ts = 0.5 * (box[0] + box[1])[:N], 0.5 * (box[0] + box[1])[N]
    else:
        xs, ts = np.asarray(center[0], float), float(center[1])
    if r is None:
        ext = np.maximum(np.abs(box[0] - np.append(xs, ts)), np.abs(box[1] - np.append(xs, ts)))
        r = max(float(np.linalg.norm(ext[:N])), math.sqrt(2 * ext[N]), 1e-12)
    if d is None:
        d = 2 * r
    grid = grid or cylinder_grid(xs, ts, 2 * r, n)
    W = field("wolff", mu, grid, PotentialParams(beta=beta, R=R, d=d), workers)
    M = field("max2", mu, grid, PotentialParams(beta=beta, R=R, d=d), workers)
    vol = grid.node_volume
    floor = 0.0 if beta == 0 else mu.total * C.level_scale(r, R, N)
    wmax = W.sup()
    if lambdas is None:
        lambdas = [wmax / 3.0 * 2.0 ** (-j) for j in range(1, 4)]
    lambdas = [float(l) for l in lambdas if l > floor]
    if not lambdas:
        return _report(name, INCONCLUSIVE, reason="no lambda above the floor", floor=floor, depends_on=dep)
    if eps_ladder is None:
        ratios = [float(np.min(M.values[W.values > 3 * l]) / l) for l in lambdas if np.any(W.values > 3 * l)]
        if not ratios:
            return _report(name, INCONCLUSIVE, reason="all set measures zero", lambdas=lambdas, depends_on=dep)
        e0 = 2.0 * min(ratios)
        eps_ladder = [e0 * 2.0 ** (-j) for j in range(4)]
    eps_ladder = sorted((float(e) for e in eps_ladder), reverse=True)
    rows = []
    chat = []
    any_set = False
    for e in eps_ladder:
        fac = exp_factor(e, beta)
        best = 0.0
        for lam in lambdas:
            big = float(np.count_nonzero(W.values > lam)) * vol
            lhs = float(np.count_nonzero((W.values > 3 * lam) & (M.values <= e * lam))) * vol
            any_set |= big > 0
            c = 0.0 if lhs == 0 else (math.inf if fac == 0 or big == 0 else lhs / (fac * big))
            rows.append({"eps": e, "lambda": lam, "lhs": lhs, "rhs_set": big, "factor": fac, "c1_hat": c})
            best = max(best, c)
        chat.append(best)
    if not any_set:
        return _report(name, INCONCLUSIVE, reason="all set measures zero", rows=rows, depends_on=dep)
    mono = all(b <= a * (1 + 1e-12) for a, b in zip(chat[:-1], chat[1:]))
    return _report(name, PASS if mono and all(math.isfinite(c) for c in chat) else FAIL,
                   eps=eps_ladder, c1_hat=chat, lambdas=lambdas, floor=floor, r=r, rows=rows,
                   depends_on=dep)


# --------------------------------------------------------------------------- double average

def _fit_slope(x, y):
    lx, ly = np.log(np.asarray(x)), np.log(np.asarray(y))
    return float(np.polyfit(lx, ly, 1)[0])


def check_double_average(mu: SpaceTimeMeasure, beta, r_prime, center, deltas=None, R=math.inf, d=1.0,
                         n=24, workers=1):
    """Average of ``exp(delta M2^{-q} W_R[mu*]^q)`` over ``Q_{2r'}``, ``q = 1/(1-beta)``.

    ``mu* = mu`` restricted to ``Q_{r'}(center)``.  Passes iff every average is
    finite, they increase with ``delta`` and the log-log slope against
    ``delta1 - delta`` is at least ``-1.1``.
    """
    name = "double"
    dep = "c11 = c11(N, beta, d, r); independent of r when beta = 0"
    x, t = np.atleast_1d(np.asarray(center[0], float)), float(center[1])
    d1 = C.delta1(beta)
    deltas = [d1 * (1 - 2.0 ** (-j)) for j in range(1, 5)] if deltas is None else list(deltas)
    if any(not (0 < dl < d1) for dl in deltas):
        raise ValueError(f"every delta must lie in (0, delta1={d1:g})")
    star = restrict_to_cylinder(mu, x, t, r_prime)
    if star.is_zero:
        return _report(name, PASS, averages=[1.0] * len(deltas), deltas=deltas, delta1=d1,
                       reason="zero measure: integrand is 1", depends_on=dep)
    if star.has_atoms:
        return _report(name, INAPPLICABLE, reason="inadmissible measure: atoms make M2 infinite",
                       depends_on=dep)
    grid = cylinder_grid(x, t, 2 * r_prime, n)
    p = PotentialParams(beta=beta, R=R, d=d)
    M2 = field("max2", star, grid, p, workers).sup()
    if not math.isfinite(M2) or M2 <= 0:
        return _report(name, INAPPLICABLE, reason="M2 not finite", M2=M2, depends_on=dep)
    W = field("wolff", star, grid, p, workers)
    inside = _inside_cylinder(grid, x, t, 2 * r_prime)
    q = 1.0 / (1.0 - beta)
    base = (W.values[inside] / M2) ** q
    avgs = []
    with np.errstate(over="ignore"):
        for dl in deltas:
            avgs.append(float(np.mean(np.exp(dl * base))))
    finite = all(math.isfinite(a) for a in avgs)
    order = np.argsort(deltas)
    incr = all(avgs[order[i + 1]] >= avgs[order[i]] for i in range(len(order) - 1))
    slope = _fit_slope([d1 - dl for dl in deltas], avgs) if finite and len(deltas) > 1 else float("nan")
    ok = finite and incr and (len(deltas) < 2 or slope >= -1.1)
    return _report(name, PASS if ok else FAIL, deltas=deltas, delta1=d1, averages=avgs, M2=M2,
                   slope=slope, increasing=incr, depends_on=dep)


# --------------------------------------------------------------------------- Hexp

def _centred_grid(x, t, s, n):
    """Nodes at the centres of an ``n^(N+1)`` cell partition of the box of ``Q_s(x, t)``."""
    x = np.atleast_1d(np.asarray(x, float))
    half = 0.5 * s * s
    dt = 2 * half / n
    t0 = t - half - 0.5 * dt
    return SpaceTimeGrid(tuple(x - s), tuple(x + s), n, t0 + n * dt, n, t0)


def cylinder_integral(values, grid: SpaceTimeGrid, x, t, s):
    """``int_{Q_s(x,t)} f`` for node values on a grid from :func:`_centred_grid`;
    each node carries the exact volume of its cell inside the cylinder."""
    sc = grid.spatial_cells
    lo, hi = sc.cell_bounds()
    ov = box_ball_overlap(lo, hi, np.atleast_1d(np.asarray(x, float)), s).reshape(sc.shape)
    tc = grid.times
    tw = interval_overlap(tc - 0.5 * grid.dt, tc + 0.5 * grid.dt, t - 0.5 * s * s, t + 0.5 * s * s)
    return float(np.sum(values * ov[..., None] * tw))


def _hexp_pass(mu, beta, R, radii, centers, d, M2, n, workers):
    N = mu.N
    p = PotentialParams(beta=beta, R=R, d=d)
    q = 1.0 / (1.0 - beta)
    d2 = C.delta2(beta)

    def expo(W):
        with np.errstate(over="ignore"):
            return np.exp(d2 * (W / M2) ** q)

    expH = []
    for (x, t) in centers:
        for r in radii:
            g = _centred_grid(x, t, r, n)
            expH.append(cylinder_integral(expo(field("wolff", mu, g, p, workers).values), g, x, t, r))
    # W_R[E] = W_R[1] + W_R[E - 1] with W_R[1] = omega_N R^2 / 2 and E - 1
    # supported within parabolic distance R of supp(mu)
    box = _support_box(mu)
    lo, hi = box[0][:N] - R, box[1][:N] + R
    t0, t1 = box[0][N] - 0.5 * R * R, box[1][N] + 0.5 * R * R
    grid = SpaceTimeGrid(tuple(lo), tuple(hi), n, t1, n, t0)
    E = expo(field("wolff", mu, grid, p, workers).values)
    wE = 0.0
    if np.any(E > 1.0):
        excess = SpaceTimeMeasure.from_density(grid.cells, E - 1.0)
        wE = field("wolff", excess, grid, p, workers).sup()
    return expH, C.omega_N(N) * R * R / 2.0 + wE


def check_hexp(mu: SpaceTimeMeasure, beta, R, radii=None, centers=None, d=1.0, n=24, workers=1):
    """Finiteness and refinement stability of the local exponential integrals and
    of ``sup W_R[exp(delta2 M2^{-q} W_R[mu]^q)]``.

    Computed on ``n`` and ``2n`` nodes per axis; passes iff all values are finite
    and each changes by less than 5%.
    """
    name = "hexp"
    dep = "c12, c13 = c(N, beta, R, d); delta2 = delta2(beta)"
    if not (R > 0 and math.isfinite(R)):
        raise ValueError("R must be finite and > 0")
    N = mu.N
    radii = [R / 4, R / 2] if radii is None else [float(r) for r in radii if 0 < r < R]
    if not radii:
        raise ValueError("need radii in (0, R)")
    if mu.is_zero:
        expH = [C.omega_N(N) * r ** (N + 2) for r in radii]
        return _report(name, PASS, reason="zero measure: integrand is 1", expH=expH,
                       Hexp=C.omega_N(N) * R * R / 2.0, depends_on=dep)
    if mu.has_atoms:
        return _report(name, INAPPLICABLE, reason="atoms make M2 infinite", depends_on=dep)
    box = _support_box(mu)
    pg = SpaceTimeGrid(tuple(box[0][:N]), tuple(box[1][:N]), 16, float(box[1][N]), 16, float(box[0][N]))
    M2 = sup_norm("max2", mu, pg, PotentialParams(beta=beta, R=math.inf, d=d), workers)
    if not math.isfinite(M2) or M2 <= 0:
        return _report(name, INAPPLICABLE, reason="M2 not finite", M2=M2, depends_on=dep)
    if centers is None:
        mid = 0.5 * (box[0] + box[1])
        centers = [(mid[:N], float(mid[N])), (box[0][:N], float(box[0][N])), (box[1][:N], float(box[1][N]))]
    coarse = _hexp_pass(mu, beta, R, radii, centers, d, M2, n, workers)
    fine = _hexp_pass(mu, beta, R, radii, centers, d, M2, 2 * n, workers)
    vals_c = coarse[0] + [coarse[1]]
    vals_f = fine[0] + [fine[1]]
    ratios = [f / c if c > 0 else math.inf for c, f in zip(vals_c, vals_f)]
    finite = all(math.isfinite(v) for v in vals_c + vals_f)
    stable = all(abs(r - 1) < 0.05 for r in ratios)
    return _report(name, PASS if finite and stable else FAIL, M2=M2, radii=radii,
                   expH_coarse=coarse[0], expH_fine=fine[0], Hexp_coarse=coarse[1], Hexp_fine=fine[1],
                   ratios=ratios, depends_on=dep)


# --------------------------------------------------------------------------- initial-value bound

def check_initial_exp_bound(omega: SpatialMeasure, alpha, delta, t_ladder, domain: Domain, n=32,
                            probe=32, workers=1):
    """Nodewise ``exp(delta u^alpha) <= c18 t^{-1/2} + 2`` for the whole-space heat flow of ``omega``.

    Admissibility ``||M1_{alpha,inf}[omega]|| <= c19^{-1} delta^{-1/alpha}`` is
    probed first; inadmissible data are still evaluated and the outcome is
    recorded with status INAPPLICABLE.
    """
    name = "initexp"
    dep = "c18 = c18(N), c19 = c19(N) (closed forms)"
    if not omega.is_nonnegative():
        raise ValueError("initial-value bound concerns nonnegative data")
    N = omega.N
    m1 = C.initial_threshold(N, alpha, delta)
    lo, hi = domain.bounding_box()
    if omega.is_zero:
        sup_m = 0.0
    elif omega.has_atoms:
        sup_m = math.inf
    else:
        pg = SpaceTimeGrid(lo, hi, probe, 1.0, 1)
        sup_m = sup_norm("max1", omega, pg, PotentialParams(alpha=alpha, R=math.inf, d=domain.d), workers)
    admissible = sup_m <= m1 * (1 + 1e-12)
    c18 = C.c18(N, "closed")
    viol = []
    slack = math.inf
    rows = []
    for t in t_ladder:
        g = SpaceTimeGrid(lo, hi, n, float(t), 1, float(t) * (1 - 1e-9))
        u = apply_G(omega, g, domain, whole_space=True).values[..., 0] if not omega.is_zero else np.zeros(g.nx)
        with np.errstate(over="ignore"):
            lhs = np.exp(delta * np.abs(u) ** alpha)
        rhs = c18 / math.sqrt(t) + 2.0
        bad = lhs > rhs
        s = float(rhs - lhs.max())
        slack = min(slack, s)
        rows.append({"t": float(t), "max_lhs": float(lhs.max()), "rhs": rhs, "violations": int(bad.sum())})
        if bad.any():
            idx = np.argwhere(bad)[:5]
            viol += [{"x": [float(g.x_axes()[a][i[a]]) for a in range(N)], "t": float(t)} for i in idx]
    passed = not viol
    status = (PASS if passed else FAIL) if admissible else INAPPLICABLE
    return _report(name, status, admissible=admissible, M1=m1, probe_sup_M1=sup_m, min_slack=slack,
                   outcome="holds" if passed else "fails", rows=rows, violations=viol, depends_on=dep)


def scale_to_threshold(omega: SpatialMeasure, alpha, delta, domain: Domain, probe=32, workers=1):
    """``omega`` rescaled so its probed ``||M1||_inf`` equals ``c19^{-1} delta^{-1/alpha}``."""
    pg = SpaceTimeGrid(*domain.bounding_box(), probe, 1.0, 1)
    m = sup_norm("max1", omega, pg, PotentialParams(alpha=alpha, R=math.inf, d=domain.d), workers)
    if not (0 < m < math.inf):
        raise ValueError("cannot rescale a measure with zero or infinite maximal potential")
    return omega.scaled(C.initial_threshold(omega.N, alpha, delta) / m)


# --------------------------------------------------------------------------- Wolff domination

def check_wolff_domination(mu: SpaceTimeMeasure, domain: Domain, grid: SpaceTimeGrid | None = None,
                           n=32, cfg: GreenConfig = GreenConfig(), workers=1, rtol=1e-8, atol=1e-10):
    """Nodewise ``D[mu] <= c20 W_2d[mu]`` for nonnegative ``mu``."""
    name = "wolffdom"
    dep = "c20 = 2^N/(2^N-1) c21(N); needs T <= d^2/2"
    if not mu.is_nonnegative():
        raise ValueError("domination concerns nonnegative measures")
    grid = grid or SpaceTimeGrid.for_domain(domain, n, n)
    if mu.is_zero:
        return _report(name, PASS, violations=0, nodes=int(np.prod(grid.shape)), depends_on=dep)
    u = duhamel(mu, grid, domain, cfg).values
    d = domain.d
    W = field("wolff", mu, grid, PotentialParams(R=2 * d, d=d), workers).values
    c20 = C.c20(domain.N)
    bound = c20 * W
    bad = u > bound * (1 + rtol) + atol
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bound > 0, u / bound, 0.0)
    out = {"violations": int(bad.sum()), "nodes": int(bad.size), "max_ratio": float(np.nanmax(ratio)),
           "c20": c20}
    if bad.any():
        i = np.unravel_index(int(np.argmax(np.where(bad, u - bound, -np.inf))), grid.shape)
        out["worst"] = {"x": [float(grid.x_axes()[a][i[a]]) for a in range(grid.N)],
                        "t": float(grid.times[i[-1]]), "u": float(u[i]), "bound": float(bound[i])}
    return _report(name, PASS if not bad.any() else FAIL, depends_on=dep, **out)


# --------------------------------------------------------------------------- exponential integrability

def check_exp_stability(spec, delta, q=None, levels=2):
    """Grid integral of ``exp(delta |u|^q)`` for the linear solution under grid doubling.

    Passes iff successive integrals differ by less than 5%.
    """
    from .solver import exp_integral, solve_linear

    name = "expint"
    q = spec.nonlinearity.q if q is None else q
    vals = []
    sp = spec
    for j in range(levels):
        if j:
            sp = sp.with_(nx=tuple(2 * v for v in sp.nx), nt=2 * sp.nt)
        vals.append(exp_integral(solve_linear(sp), delta, q))
    ratios = [b / a for a, b in zip(vals[:-1], vals[1:])]
    ok = all(math.isfinite(v) for v in vals) and all(abs(r - 1) < 0.05 for r in ratios)
    return _report(name, PASS if ok else FAIL, integrals=vals, ratios=ratios,
                   depends_on="c22 = c22(N, T, Omega, d, delta); only boundedness is asserted")
