"""Command-line entry point: ``parapot <command> ...``.

Exit codes: 0 when every requested check passes (or is inapplicable by
design), 1 on a failed check or a computation error, 2 on unreadable or
schema-violating input.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
import warnings

import numpy as np

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Malformed or schema-violating input; reported with its location."""


# --------------------------------------------------------------------------- io helpers

def load_json(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def jsonable(x):
    """Recursively convert numpy scalars/arrays and non-finite floats."""
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return x


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_field_csv(path, fld, chash, provenance):
    """CSV with two ``#`` header lines (config hash, provenance) then the field rows."""
    tmp = path + ".tmp"
    fld.to_csv(tmp)
    with open(path, "w") as out, open(tmp) as src:
        out.write(f"# config_sha256: {chash}\n")
        out.write("# provenance: " + json.dumps(jsonable(provenance), sort_keys=True, separators=(",", ":")) + "\n")
        out.write(src.read())
    os.remove(tmp)


def _require(cfg, key, where, types=None):
    if not isinstance(cfg, dict):
        raise InputError(f"{where}: expected an object")
    if key not in cfg:
        raise InputError(f"{where}.{key}: required field missing")
    v = cfg[key]
    if types is not None and not isinstance(v, types):
        raise InputError(f"{where}.{key}: expected {getattr(types, '__name__', types)}")
    return v


def _num(v, where):
    if isinstance(v, str) and v.lower() in ("inf", "infinity"):
        return math.inf
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise InputError(f"{where}: expected a number")
    return float(v)


def _parse(fn, where):
    """Run a constructor, turning data errors into located input errors."""
    try:
        return fn()
    except InputError:
        raise
    except (KeyError, ValueError, TypeError, IndexError) as exc:
        raise InputError(f"{where}: {exc}") from exc


def _out_path(args, name):
    os.makedirs(args.out_dir, exist_ok=True)
    return name if os.path.isabs(name) or os.path.dirname(name) else os.path.join(args.out_dir, name)


# --------------------------------------------------------------------------- shared pieces

def _domain(cfg, where="config"):
    from .measures import Domain

    d = _require(cfg, "domain", where, dict)
    return _parse(lambda: Domain.from_dict(d), f"{where}.domain")


def _provenance(N, cfg=None):
    """Constants provenance for the given dimension (source rows only if requested)."""
    from .constants import build_table

    cfg = cfg or {}
    nl = cfg.get("nonlinearity", {}) if isinstance(cfg, dict) else {}
    q, ell, a = float(nl.get("q", 1.0)), int(nl.get("ell", 1)), float(nl.get("a", 1.0))
    d = None
    if isinstance(cfg, dict) and isinstance(cfg.get("domain"), dict):
        from .measures import Domain

        try:
            d = Domain.from_dict(cfg["domain"]).d
        except (KeyError, ValueError, TypeError):
            d = None
    # source rows need c30; only build them when the config asks for a source problem
    if cfg.get("kind") != "source":
        q, ell = 1.0, 1
    t = build_table(N, q=q, ell=ell, a=a, d=d or 1.0, c30=cfg.get("params", {}).get("c30"))
    return t.provenance_block()


def _grid(cfg, domain, where="config", default="32"):
    from .grids import SpaceTimeGrid, parse_grid_spec

    spec = cfg.get("grid", default)
    nx, nt = _parse(lambda: parse_grid_spec(spec, domain.N), f"{where}.grid")
    return SpaceTimeGrid.for_domain(domain, nx, nt)


# --------------------------------------------------------------------------- commands

def cmd_constants(args):
    from .constants import build_table
    from .measures import Domain

    cfg = load_json(args.inputs)
    N = int(_num(_require(cfg, "N", "inputs"), "inputs.N"))
    domain = _parse(lambda: Domain.from_dict(cfg["domain"]), "inputs.domain") if "domain" in cfg else None
    kw = {}
    for k in ("alpha", "beta", "q", "a", "d", "delta", "c30", "r", "R"):
        if k in cfg:
            kw[k] = _num(cfg[k], f"inputs.{k}")
    if "ell" in cfg:
        kw["ell"] = int(_num(cfg["ell"], "inputs.ell"))
    if "d" not in kw and domain is None:
        kw["d"] = 1.0
    table = _parse(lambda: build_table(N, domain=domain, **kw), "inputs")
    chash = config_hash(cfg)
    path = _out_path(args, args.out or "table.csv")
    table.to_csv(path + ".tmp")
    with open(path, "w") as out, open(path + ".tmp") as src:
        out.write(f"# config_sha256: {chash}\n")
        out.write(src.read())
    os.remove(path + ".tmp")
    write_json(os.path.splitext(path)[0] + ".json",
               {"config_sha256": chash, "provenance": table.provenance_block()})
    print(f"wrote {path}")
    return EXIT_OK


def _potential_inputs(args):
    """Merge ``--spec`` (one file) or ``--measure``/``--params`` (two files) into one config."""
    if args.spec:
        cfg = load_json(args.spec)
    else:
        if not args.measure:
            raise InputError("potential: pass --spec or --measure")
        m = load_json(args.measure)
        pr = load_json(args.params) if args.params else {}
        if not isinstance(m, dict) or not isinstance(pr, dict):
            raise InputError("potential: measure and params files must hold JSON objects")
        cfg = {"measure": m.get("measure", m), "params": pr.get("params", pr)}
        for k in ("domain", "kind", "grid"):
            for src in (pr, m):
                if k in src and k not in cfg:
                    cfg[k] = src[k]
        cfg["measure"] = {k: v for k, v in cfg["measure"].items() if k not in ("domain", "kind", "grid")}
        cfg["params"] = {k: v for k, v in cfg["params"].items() if k not in ("domain", "kind", "grid")}
    if args.grid:
        cfg["grid"] = args.grid
    if args.kind:
        cfg["kind"] = args.kind
    return cfg


def cmd_potential(args):
    from .measures import spacetime_from_json, spatial_from_json
    from .potentials import PotentialParams, field

    cfg = _potential_inputs(args)
    domain = _domain(cfg)
    kind = cfg.get("kind", "wolff")
    if kind not in ("wolff", "max1", "max2"):
        raise InputError(f"config.kind: unknown potential kind {kind!r}")
    mcfg = _require(cfg, "measure", "config", dict)
    if kind == "max1":
        m = _parse(lambda: spatial_from_json(mcfg, domain.N, domain), "config.measure")
    else:
        m = _parse(lambda: spacetime_from_json(mcfg, domain.N, domain), "config.measure")
    pd = dict(cfg.get("params", {}))
    pd.setdefault("d", domain.d)
    p = _parse(lambda: PotentialParams.from_dict(pd), "config.params")
    grid = _grid(cfg, domain)
    chash = config_hash(cfg)
    prov = _provenance(domain.N, cfg)
    fld = field(kind, m, grid, p, workers=args.workers)
    path = _out_path(args, args.out or f"{kind}.csv")
    write_field_csv(path, fld, chash, prov)
    print(f"wrote {path}")
    return EXIT_OK


def read_probes(path, N):
    """Probe CSV: columns ``x1..xN,t`` and optionally ``y1..yN``; ``#`` lines skipped."""
    try:
        with open(path) as fh:
            rows = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    if not rows:
        raise InputError(f"{path}: no probe rows")
    head = [h.strip() for h in rows[0].split(",")]
    want = [f"x{i + 1}" for i in range(N)] + ["t"]
    if head[:N + 1] != want:
        raise InputError(f"{path}:1: header must start with {','.join(want)}")
    ycols = [f"y{i + 1}" for i in range(N)]
    has_y = head[N + 1:2 * N + 1] == ycols
    data = []
    for ln_no, ln in enumerate(rows[1:], start=2):
        try:
            data.append([float(v) for v in ln.split(",")[:len(head)]])
        except ValueError as exc:
            raise InputError(f"{path}:{ln_no}: {exc}") from exc
    A = np.array(data, float).reshape(-1, len(head))
    return A[:, :N], A[:, N], (A[:, N + 1:2 * N + 1] if has_y else None)


def _green_at_probes(cfg, domain, gc, probe_path):
    from .kernels import green_box
    from .measures import spatial_from_json

    X, T, Y = read_probes(probe_path, domain.N)
    if np.any(T <= 0):
        raise InputError(f"{probe_path}: probe times must be positive")
    if Y is not None:
        vals = np.array([green_box(x, t, y, domain, gc) for x, t, y in zip(X, T, Y)], float)
        return X, T, Y, vals
    om = _parse(lambda: spatial_from_json(cfg.get("omega", {}), domain.N, domain), "config.omega")
    if om.density is not None and np.any(om.density.values):
        raise InputError("config.omega: probe evaluation takes atomic data; use a grid for densities")
    vals = np.zeros(len(T))
    for i, (x, t) in enumerate(zip(X, T)):
        for y, w in zip(om.points, om.weights):
            vals[i] += w * green_box(x, t, y, domain, gc)
    return X, T, None, vals


def cmd_green(args):
    from .kernels import GreenConfig, apply_G, duhamel
    from .measures import spacetime_from_json, spatial_from_json

    cfg = load_json(args.config or args.spec or "")
    domain = _domain(cfg)
    gc = _parse(lambda: GreenConfig.from_dict(cfg.get("green", {})), "config.green")
    chash, prov = config_hash(cfg), _provenance(domain.N, cfg)
    if args.probe:
        X, T, Y, vals = _green_at_probes(cfg, domain, gc, args.probe)
        path = _out_path(args, args.out or "vals.csv")
        N = domain.N
        cols = [f"x{i + 1}" for i in range(N)] + ["t"] + ([f"y{i + 1}" for i in range(N)] if Y is not None else [])
        with open(path, "w") as fh:
            fh.write(f"# config_sha256: {chash}\n")
            fh.write("# provenance: " + json.dumps(jsonable(prov), sort_keys=True, separators=(",", ":")) + "\n")
            fh.write(",".join(cols + ["value"]) + "\n")
            for i in range(len(T)):
                row = list(X[i]) + [T[i]] + (list(Y[i]) if Y is not None else []) + [vals[i]]
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        print(f"wrote {path}")
        return EXIT_OK
    om = _parse(lambda: spatial_from_json(cfg.get("omega", {}), domain.N, domain), "config.omega")
    mu = _parse(lambda: spacetime_from_json(cfg.get("mu", {}), domain.N, domain), "config.mu")
    grid = _grid(cfg, domain)
    fld = apply_G(om, grid, domain, gc, whole_space=bool(cfg.get("whole_space", False)))
    if not mu.is_zero:
        fld.values = fld.values + duhamel(mu, grid, domain, gc).values
    path = _out_path(args, args.out or "green.csv")
    write_field_csv(path, fld, chash, prov)
    print(f"wrote {path}")
    return EXIT_OK


def _invariant_failures(sol):
    bad = []
    inv = sol.report.get("invariants", {})
    for k, v in inv.items():
        if k in ("ladder_monotone", "converged"):
            continue  # reported as flags, not failures
        if v is False:
            bad.append(k)
    est1 = sol.report.get("est1")
    if est1 and est1.get("violations", 0):
        bad.append("est1")
    return bad


def cmd_solve(args):
    from .solver import ProblemSpec, solve, weak_residual

    cfg = load_json(args.spec)
    _domain(cfg)
    spec = _parse(lambda: ProblemSpec.from_dict(cfg), "config")
    chash = config_hash(cfg)
    prov = _provenance(spec.N, cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sol = solve(spec)
    rows, mx = weak_residual(sol, spec)
    failures = _invariant_failures(sol)
    report = {"config_sha256": chash, "provenance": prov, "kind": spec.kind,
              "grid": {"nx": list(spec.nx), "nt": spec.nt}, "converged": sol.converged,
              "iterates": sol.iterates, "report": sol.report,
              "weak_residual": {"max": mx, "rows": rows},
              "warnings": [str(w.message) for w in caught],
              "status": "FAIL" if failures else "PASS", "failed_invariants": failures}
    path = _out_path(args, args.out or "solution.csv")
    write_field_csv(path, sol.u, chash, prov)
    write_json(_out_path(args, args.report or "report.json"), report)
    print(f"wrote {path}; status {report['status']}")
    return EXIT_FAIL if failures else EXIT_OK


VERIFY_CHECKS = ("levelset", "double", "hexp", "initexp", "wolffdom", "expint")


def run_check(check, cfg, workers=1):
    from . import verify as V
    from .measures import spacetime_from_json, spatial_from_json
    from .solver import ProblemSpec

    where = "config"
    N = None
    domain = None
    if "domain" in cfg:
        domain = _domain(cfg)
        N = domain.N
    num = lambda k, default=None: _num(cfg[k], f"{where}.{k}") if k in cfg else default
    lst = lambda k: [_num(v, f"{where}.{k}[]") for v in cfg[k]] if k in cfg else None

    def measure():
        m = _require(cfg, "measure", where, dict)
        return _parse(lambda: spacetime_from_json(m, N, domain), f"{where}.measure")

    if check == "levelset":
        c = cfg.get("center")
        center = (c["x"], c["t"]) if c else None
        return V.check_levelset_decay(measure(), num("beta", 0.0), num("R", math.inf), lst("lambdas"),
                                      lst("eps"), r=num("r"), center=center, d=num("d"),
                                      n=int(num("n", 32)), workers=workers)
    if check == "double":
        c = _require(cfg, "center", where, dict)
        return V.check_double_average(measure(), num("beta", 0.0), _num(_require(cfg, "r_prime", where),
                                      f"{where}.r_prime"), (c["x"], c["t"]), lst("deltas"),
                                      num("R", math.inf), num("d", 1.0), int(num("n", 24)), workers)
    if check == "hexp":
        return V.check_hexp(measure(), num("beta", 0.0), _num(_require(cfg, "R", where), f"{where}.R"),
                            lst("radii"), None, num("d", 1.0), int(num("n", 24)), workers)
    if check == "initexp":
        if domain is None:
            raise InputError(f"{where}.domain: required field missing")
        om = _parse(lambda: spatial_from_json(_require(cfg, "omega", where, dict), N, domain), f"{where}.omega")
        ts = lst("t") or [0.01, 0.05, 0.1, 0.25]
        return V.check_initial_exp_bound(om, num("alpha", 1.0), num("delta", 1.0), ts, domain,
                                         int(num("n", 32)), workers=workers)
    if check == "wolffdom":
        if domain is None:
            raise InputError(f"{where}.domain: required field missing")
        return V.check_wolff_domination(measure(), domain, n=int(num("n", 32)), workers=workers)
    if check == "expint":
        pcfg = _require(cfg, "problem", where, dict)
        spec = _parse(lambda: ProblemSpec.from_dict(pcfg), f"{where}.problem")
        return V.check_exp_stability(spec, num("delta", 1.0), num("q"))
    raise InputError(f"{where}.check: unknown check {check!r}; choose from {VERIFY_CHECKS}")


def cmd_verify(args):
    from .verify import OK_STATUSES

    cfg = load_json(args.spec)
    check = args.check or cfg.get("check")
    if not check:
        raise InputError("config.check: required field missing (or pass --check)")
    rep = run_check(check, cfg, args.workers)
    N = _domain(cfg).N if "domain" in cfg else int(cfg.get("N", 2))
    rep["config_sha256"] = config_hash(cfg)
    rep["provenance"] = _provenance(N, cfg)
    write_json(_out_path(args, args.out or f"verify_{check}.json"), rep)
    print(f"{check}: {rep['status']}")
    return EXIT_OK if rep["status"] in OK_STATUSES else EXIT_FAIL


def cmd_bench(args):
    from .grids import SpaceTimeGrid, parse_grid_spec
    from .measures import SpaceTimeMeasure
    from .potentials import wolff_atoms_field

    nx, nt = parse_grid_spec(args.grid, 2)
    rng = np.random.default_rng(args.seed)
    J = args.atoms
    mu = SpaceTimeMeasure(2, rng.uniform(0, 1, (J, 2)), rng.uniform(0, 0.5, J), rng.uniform(0, 1, J))
    grid = SpaceTimeGrid((0.0, 0.0), (1.0, 1.0), nx, 0.5, nt)
    R = 2 * (math.sqrt(2) + 0.5)
    wolff_atoms_field(SpaceTimeMeasure.atom([0.5, 0.5], 0.25), SpaceTimeGrid((0, 0), (1, 1), 2, 0.5, 2), R)
    t0 = time.perf_counter()
    v1, f1 = wolff_atoms_field(mu, grid, R, workers=1)
    t1 = time.perf_counter()
    vn, fn = wolff_atoms_field(mu, grid, R, workers=args.workers)
    t2 = time.perf_counter()
    same = v1.tobytes() == vn.tobytes() and f1.tobytes() == fn.tobytes()
    rep = {"atoms": J, "grid": list(grid.shape), "seed": args.seed, "single_worker_s": t1 - t0,
           "workers": args.workers, "parallel_s": t2 - t1, "byte_identical": same,
           "status": "PASS" if same and (t1 - t0) < 60 else "FAIL"}
    write_json(_out_path(args, args.out or "bench.json"), rep)
    print(f"single {t1 - t0:.2f}s, {args.workers} workers {t2 - t1:.2f}s, identical={same}")
    return EXIT_OK if rep["status"] == "PASS" else EXIT_FAIL


def cmd_run(args):
    """Batch runner: ``{"runs": [{"command": ..., ...}, ...]}`` or a single run object."""
    cfg = load_json(args.config)
    runs = cfg["runs"] if isinstance(cfg, dict) and "runs" in cfg else [cfg]
    if not isinstance(runs, list):
        raise InputError("config.runs: expected a list")
    base = os.path.dirname(os.path.abspath(args.config))
    summary = []
    worst = EXIT_OK
    for i, run in enumerate(runs):
        cmd = _require(run, "command", f"config.runs[{i}]", str)
        if cmd not in ("constants", "potential", "green", "solve", "verify", "bench"):
            raise InputError(f"config.runs[{i}].command: unknown command {cmd!r}")
        sub = argparse.Namespace(**vars(args))
        sub.out_dir = os.path.join(args.out_dir, f"run{i:02d}_{cmd}")
        body = {k: v for k, v in run.items() if k not in ("command", "args")}
        opts = run.get("args", {})
        path = os.path.join(sub.out_dir, "input.json")
        os.makedirs(sub.out_dir, exist_ok=True)
        if "file" in run:
            path = os.path.join(base, run["file"])
        else:
            write_json(path, body)
        for k in ("inputs", "spec", "config"):
            setattr(sub, k, path)
        sub.measure = sub.params = sub.probe = None
        sub.out = opts.get("out")
        sub.report = opts.get("report")
        sub.kind = opts.get("kind")
        sub.check = opts.get("check", body.get("check"))
        sub.atoms = int(opts.get("atoms", 10000))
        sub.grid = opts.get("grid", "64x64x64" if cmd == "bench" else None)
        code = _dispatch(cmd, sub)
        summary.append((i, cmd, code))
        worst = max(worst, code)
    path = _out_path(args, "summary.csv")
    with open(path, "w") as fh:
        fh.write(f"# config_sha256: {config_hash(cfg)}\n")
        fh.write("run,command,exit_code,status\n")
        for i, cmd, code in summary:
            fh.write(f"{i},{cmd},{code},{'OK' if code == 0 else 'FAIL'}\n")
    print(f"wrote {path}")
    return worst


COMMANDS = {"constants": cmd_constants, "potential": cmd_potential, "green": cmd_green,
            "solve": cmd_solve, "verify": cmd_verify, "bench": cmd_bench, "run": cmd_run}


def _dispatch(name, args):
    try:
        return COMMANDS[name](args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # module errors surface verbatim
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


def build_parser():
    ap = argparse.ArgumentParser(prog="parapot", description=__doc__.splitlines()[0])
    ap.add_argument("--workers", type=int, default=1, help="worker threads (outputs do not depend on it)")
    ap.add_argument("--seed", type=int, default=0, help="seed for randomly generated inputs")
    ap.add_argument("--out-dir", default=".", help="directory for artifacts")
    sp = ap.add_subparsers(dest="command", required=True)

    p = sp.add_parser("constants", help="constants table")
    p.add_argument("--inputs", required=True)
    p.add_argument("--out")

    p = sp.add_parser("potential", help="Wolff or maximal potential field")
    p.add_argument("--spec", help="single config holding domain, measure, params, grid")
    p.add_argument("--measure", help="measure JSON (may carry domain)")
    p.add_argument("--params", help="potential parameters JSON")
    p.add_argument("--grid", help="grid such as 64x64x64")
    p.add_argument("--kind", choices=("wolff", "max1", "max2"))
    p.add_argument("--out")

    p = sp.add_parser("green", help="Green operator applied to data, on a grid or at probes")
    p.add_argument("--config", help="config with domain, omega, mu, green, grid")
    p.add_argument("--spec", help="alias of --config")
    p.add_argument("--probe", help="CSV of probe points x1..xN,t[,y1..yN]")
    p.add_argument("--out")

    p = sp.add_parser("solve", help="linear, absorption or source problem")
    p.add_argument("--spec", required=True)
    p.add_argument("--out")
    p.add_argument("--report")

    p = sp.add_parser("verify", help="numerical check of an estimate")
    p.add_argument("--check", choices=VERIFY_CHECKS)
    p.add_argument("--spec", required=True)
    p.add_argument("--out")

    p = sp.add_parser("bench", help="atomic Wolff field timing and determinism")
    p.add_argument("--atoms", type=int, default=10000)
    p.add_argument("--grid", default="64x64x64")
    p.add_argument("--out")

    p = sp.add_parser("run", help="batch runner over a JSON config")
    p.add_argument("config")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    return _dispatch(args.command, args)


if __name__ == "__main__":
    sys.exit(main())
