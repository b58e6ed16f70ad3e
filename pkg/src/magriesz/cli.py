"""Command-line experiment runner.

Every subcommand resolves a configuration (from flags and/or a JSON or INI
file), runs one task, writes ``report.json`` plus CSV tables into the output
directory and prints a pass/fail summary. Exit codes: 0 pass, 1 invariant
failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import copy
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .io import SCHEMA_VERSION, dumps, load_field, read_json, save_decomposition, write_csv, write_json

TASKS = ("sweep", "czd", "gauge", "weights", "check", "kernel")

DEFAULTS = {
    "task": "check",
    "n": 2,
    "potential": {"name": "bracket", "gamma": 2.0, "scale": 1.0},
    "field": {"kind": "none"},
    "resolutions": [16],
    "domains": [8.0],
    "p_list": [2.0, 4.0],
    "transforms": ["L H^-1/2", "V^1/2 H^-1/2"],
    "seed": 0,
    "output": "magriesz-out",
    "tolerances": {"identity": 1e-10, "contract": 0.67, "domination": 1e-10},
    "czd": {"f": "gauss", "sigma": 0.2, "alpha": None, "percentile": 50.0, "p": 1.0},
    "gauge": {"b": 1.0, "size": 8},
    "kernel": {"lam0": 0.0, "fit_range": None},
    "force": False,
}


# side length of the refinement pair used by the subharmonicity check
PROBE_DOMAIN = 4.0


class ConfigError(ValueError):
    def __init__(self, field: str, msg: str):
        super().__init__(f"config field {field!r}: {msg}")
        self.field = field


class InvariantFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration

def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text.strip()


def load_config(path) -> dict:
    """JSON file, or INI with an ``[experiment]`` section and dotted keys for nesting."""
    path = Path(path)
    if not path.exists():
        raise ConfigError("config", f"file {path} not found")
    text = path.read_text()
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError("config", f"invalid JSON: {e}") from None
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text if text.lstrip().startswith("[") else "[experiment]\n" + text)
    except configparser.Error as e:
        raise ConfigError("config", f"invalid INI: {e}") from None
    out: dict = {}
    for section in cp.sections():
        for key, raw in cp.items(section):
            node = out
            parts = key.split(".")
            for p in parts[:-1]:
                node = node.setdefault(p, {})
            node[parts[-1]] = _parse_value(raw)
    return out


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(user: dict) -> dict:
    """Merge with defaults and validate; raises :class:`ConfigError` naming the field."""
    unknown = set(user) - set(DEFAULTS)
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown field")
    cfg = _merge(DEFAULTS, user)
    if cfg["task"] not in TASKS:
        raise ConfigError("task", f"must be one of {TASKS}")
    if cfg["n"] not in (2, 3):
        raise ConfigError("n", "dimension must be 2 or 3")
    for key in ("resolutions", "domains", "p_list"):
        vals = cfg[key]
        if not isinstance(vals, list) or not vals:
            raise ConfigError(key, "must be a nonempty list")
        if not all(isinstance(v, (int, float)) and v > 0 for v in vals):
            raise ConfigError(key, "entries must be positive numbers")
    if not all(float(v).is_integer() and v >= 4 for v in cfg["resolutions"]):
        raise ConfigError("resolutions", "entries must be integers >= 4")
    if any(p < 1 for p in cfg["p_list"]):
        raise ConfigError("p_list", "exponents must be >= 1")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed", "must be a nonnegative integer")
    for k, v in cfg["tolerances"].items():
        if not isinstance(v, (int, float)) or not v > 0:
            raise ConfigError(f"tolerances.{k}", "tolerances must be positive")
    pot = cfg["potential"]
    if pot.get("name") not in ("const", "constant", "bracket", "power"):
        raise ConfigError("potential.name", "one of const, bracket, power")
    kind = cfg["field"].get("kind")
    if kind not in ("none", "from_potential", "constant", "polynomial"):
        raise ConfigError("field.kind", "one of none, from_potential, constant, polynomial")
    cz = cfg["czd"]
    if not 1 <= float(cz["p"]) < 2:
        raise ConfigError("czd.p", "must lie in [1, 2)")
    if cz["alpha"] is not None and not float(cz["alpha"]) > 0:
        raise ConfigError("czd.alpha", "must be positive")
    if not 0 < float(cz["percentile"]) < 100:
        raise ConfigError("czd.percentile", "must lie in (0, 100)")
    if not float(cfg["gauge"]["size"]).is_integer() or cfg["gauge"]["size"] < 2:
        raise ConfigError("gauge.size", "integer >= 2")
    if float(cfg["kernel"]["lam0"]) < 0:
        raise ConfigError("kernel.lam0", "must be nonnegative")
    return cfg


# ---------------------------------------------------------------------------
# families from config

def _potential(cfg):
    from .families import potential_from_name
    p = dict(cfg["potential"])
    name = p.pop("name")
    try:
        return potential_from_name(name, **p)
    except TypeError as e:
        raise ConfigError("potential", str(e)) from None


def _field(cfg, V):
    from .families import constant_field, field_from_potential, polynomial_field
    f = cfg["field"]
    n = cfg["n"]
    kind = f["kind"]
    if kind == "none":
        return None
    if kind == "from_potential":
        return field_from_potential(V, float(f.get("c", 0.5)), n)
    if kind == "constant":
        return constant_field(n, float(f.get("b", 1.0)))
    if n != 2:
        raise ConfigError("field.kind", "polynomial fields are two-dimensional")
    return polynomial_field(f.get("coeffs", [1.0]))


def _grid(cfg, N=None, D=None):
    from .riesz import sweep_grid
    return sweep_grid(int(N or cfg["resolutions"][0]), float(D or cfg["domains"][0]), cfg["n"])


def _phases(grid, B, rng=None):
    from .families import phases_from_potential, random_phases
    from .grid import zero_phases
    if B is not None:
        return phases_from_potential(grid, B.vector_potential)
    if rng is not None:
        return random_phases(grid, rng)
    return zero_phases(grid)


# ---------------------------------------------------------------------------
# tasks

def task_sweep(cfg, out: Path) -> tuple[dict, dict]:
    from .riesz import TransformSpec, theorem_sweep
    V = _potential(cfg)
    B = _field(cfg, V)
    specs = []
    for t in cfg["transforms"]:
        try:
            specs.append(TransformSpec(**t) if isinstance(t, dict) else TransformSpec(t))
        except (TypeError, ValueError) as e:
            raise ConfigError("transforms", str(e)) from None
    try:
        rep = theorem_sweep(V, B, specs, cfg["p_list"], [int(r) for r in cfg["resolutions"]],
                            cfg["domains"], cfg["n"], seed=cfg["seed"], force=cfg["force"])
    except ValueError as e:
        raise InvariantFailure(str(e)) from None
    write_csv(out / "norms.csv", ["transform", "p", "resolution", "domain", "norm", "method"],
              [[r.transform, r.p, r.resolution, r.domain, r.norm, r.method] for r in rep.rows])
    write_csv(out / "reverse.csv", ["p", "resolution", "domain", "ratio"],
              [[r["p"], r["resolution"], r["domain"], r["ratio"]] for r in rep.reverse])
    checks = {"p2_bounds": not rep.exact_failures}
    return rep.to_dict(), checks


def _test_function(cfg, grid):
    spec = cfg["czd"]
    f = spec["f"]
    X = grid.coords() - grid.center()
    r2 = np.sum(X**2, axis=-1)
    if f == "gauss":
        return np.exp(-r2 / (2 * float(spec["sigma"]) ** 2)).astype(complex)
    if f == "power":
        beta = float(spec.get("beta", 1.0))
        cut = np.clip(1 - r2 / (0.45 * grid.side_length) ** 2, 0, None) ** 2
        return ((r2 + grid.h**2) ** (-beta / 2) * cut).astype(complex)
    try:
        arr = load_field(f)
    except (OSError, ValueError) as e:
        raise ConfigError("czd.f", f"cannot read {f!r}: {e}") from None
    if arr.shape != grid.shape:
        raise ConfigError("czd.f", f"field shape {arr.shape} does not match grid {grid.shape}")
    return arr.astype(complex)


def task_czd(cfg, out: Path) -> tuple[dict, dict]:
    from .czd import _level_density, cz_decompose, cz_verify, maximal_function
    grid = _grid(cfg)
    V = _potential(cfg)
    B = _field(cfg, V)
    theta = _phases(grid, B)
    spec = cfg["czd"]
    w = spec.get("omega")
    if w in (None, "potential"):
        omega = V.sample(grid)
    else:
        try:
            omega = np.asarray(load_field(w), dtype=float)
        except (OSError, ValueError) as e:
            raise ConfigError("czd.omega", f"cannot read {w!r}: {e}") from None
        if omega.shape != grid.shape:
            raise ConfigError("czd.omega", "weight shape does not match the grid")
    f = _test_function(cfg, grid)
    p = float(spec["p"])
    alpha = spec["alpha"]
    if alpha is None:
        M = maximal_function(_level_density(f, theta, omega, p, grid))
        alpha = float(np.percentile(M, float(spec["percentile"]))) ** (1 / p)
    try:
        dec = cz_decompose(f, theta, omega, p, float(alpha), grid, field=B, certify=False)
    except ValueError as e:
        raise InvariantFailure(str(e)) from None
    cert = cz_verify(dec, strict=False)
    save_decomposition(out / "decomposition", dec, cert)
    return cert, {"exact_identities": cert["passes"]}


def task_gauge(cfg, out: Path) -> tuple[dict, dict]:
    from .families import constant_field
    from .gauge import poincare_gauge, recover_phi
    from .grid import centered_cube
    grid = _grid(cfg)
    b = float(cfg["gauge"]["b"])
    B = constant_field(grid.n, b, center=grid.center())
    theta = _phases(grid, B)
    size = int(cfg["gauge"]["size"])
    if size > grid.N:
        raise ConfigError("gauge.size", "cube larger than the grid")
    cube = centered_cube(grid, [grid.N // 2] * grid.n, size)
    data = poincare_gauge(B, grid, cube)
    try:
        _, mismatch = recover_phi(theta, data, grid)
        ok = True
    except ValueError:
        mismatch, ok = None, False
    res = data.to_dict()
    res["mismatch"] = mismatch
    if grid.n == 2:
        res["closed_form_sup_h"] = abs(b) * cube.R * math.sqrt(2) / 4
    rows = [[k, v] for k, v in sorted(data.bounds.items())]
    write_csv(out / "gauge_bounds.csv", ["quantity", "value"], rows)
    return res, {"phase_recovery": ok}


def task_weights(cfg, out: Path) -> tuple[dict, dict]:
    from .weights import ainfty_profile, control_from_field, rh_constant
    grid = _grid(cfg)
    V = _potential(cfg)
    B = _field(cfg, V)
    w = V.sample(grid)
    levels = [lv for lv in range(0, 6) if 2**lv <= grid.N]
    res = {"rh": {}, "levels": levels}
    for q in (2.0, 4.0, math.inf):
        res["rh"][str(q)] = rh_constant(w, q, grid, levels).to_dict()
    prof = ainfty_profile(w, [0.25, 0.5, 0.75], grid, levels)
    res["ainfty"] = prof
    if B is not None:
        res["control"] = control_from_field(B, V, grid, levels).to_dict()
    write_csv(out / "rh.csv", ["q", "constant"],
              [[q, r["rh_constant"]] for q, r in res["rh"].items()])
    return res, {"finite_doubling": math.isfinite(prof["doubling_constant"])}


def task_kernel(cfg, out: Path) -> tuple[dict, dict]:
    from .operators import assemble, free_laplacian, green_kernel
    grid = _grid(cfg)
    V = _potential(cfg)
    B = _field(cfg, V)
    theta = _phases(grid, B)
    lam0 = float(cfg["kernel"]["lam0"])
    fr = cfg["kernel"]["fit_range"]
    y = (grid.N // 2,) * grid.n
    free = free_laplacian(grid)
    ks = green_kernel(free, y, lam0, fr)
    op = assemble(grid, theta, V.sample(grid))
    shift = lam0 if lam0 > 0 else 1e-3
    km = green_kernel(op, y, shift, fr)
    kd = green_kernel(free, y, shift, fr)
    excess = float(np.max(np.abs(km.values) - np.real(kd.values)))
    scale = float(np.max(np.abs(kd.values)))
    prof = ks.profile()
    write_csv(out / "kernel_profile.csv", ["distance", "abs_kernel"], prof.tolist())
    res = {"exponent_raw": ks.exponent, "exponent_images": ks.exponent_images,
           "amplitude_images": ks.amplitude_images, "fit_range": list(ks.fit_range),
           "residual_off_source": ks.residual_off_source, "domination_shift": shift,
           "domination_excess": excess / scale}
    return res, {"domination": excess <= cfg["tolerances"]["domination"] * scale}


def task_check(cfg, out: Path) -> tuple[dict, dict]:
    """Exact discrete identities plus the refinement contracts of the local suite."""
    from .grid import centered_cube, diamagnetic_violations
    from .operators import assemble, free_laplacian, heat_domination_check, kato_simon_check
    from .riesz import RieszContext, TransformSpec, pnorm_estimate, transform_matrix
    from .solutions import local_solution, scale_suite, subharmonic_identity_check

    tol = cfg["tolerances"]
    rng = np.random.default_rng(cfg["seed"])
    V = _potential(cfg)
    B = _field(cfg, V)
    grid = _grid(cfg)
    if grid.size > 4096:
        raise ConfigError("resolutions", "check runs dense spectral tests; keep N^n <= 4096")
    theta = _phases(grid, B, rng)
    op = assemble(grid, theta, V.sample(grid))
    res, checks = {}, {}

    errs = []
    for _ in range(10):
        u = rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape)
        qf = op.quadratic_form(u)
        errs.append(abs(op.energy(u) - qf) / qf)
    res["energy_identity"] = max(errs)
    checks["energy_identity"] = max(errs) <= tol["identity"]
    res["hermitian_defect"] = op.hermitian_defect()
    checks["hermitian"] = res["hermitian_defect"] <= tol["identity"]

    viol = sum(diamagnetic_violations(rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape),
                                      theta, grid) for _ in range(5))
    res["diamagnetic_violations"] = viol
    checks["diamagnetic"] = viol == 0

    lap = free_laplacian(grid)
    ks, hd = [], []
    for _ in range(3):
        f = rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape)
        nf = float(np.max(np.abs(f)))
        ks.append(kato_simon_check(op, lap, 1.0, f) / nf)
        hd.append(heat_domination_check(op, lap, 0.5, f) / nf)
    res["kato_simon_excess"], res["heat_excess"] = max(ks), max(hd)
    checks["domination"] = max(ks) <= tol["domination"] and max(hd) <= tol["domination"]

    ctx = RieszContext(op)
    p2 = {}
    for name, js in (("L H^-1/2", range(grid.n)), ("V^1/2 H^-1/2", [0])):
        for j in js:
            T = transform_matrix(ctx, TransformSpec(name, j=j))
            p2[TransformSpec(name, j=j).label] = pnorm_estimate(T, 2.0).value
    res["p2_norms"] = p2
    checks["p2_bounds"] = all(v <= 1 + 1e-8 for v in p2.values())

    # refinement pair for the subharmonicity identity (boundary-value probes)
    if grid.n == 2:
        N0, D = 64, PROBE_DOMAIN
        probes = []
        for N in (N0, 2 * N0):
            g = _grid(cfg, N, D)
            o = assemble(g, _phases(g, B), V.sample(g))
            cube = centered_cube(g, [N // 2] * 2, N // 8)
            data = lambda x: np.exp(1j * (0.7 * x[..., 0] - 0.4 * x[..., 1])) * (1 + 0.2 * x[..., 0])
            probes.append(local_solution(o, cube, boundary=data))
        sh = subharmonic_identity_check(probes[0], probes[1])
        res["subharmonic"] = sh
        checks["subharmonic_symmetric"] = (sh["coarse"]["symmetric"]
                                           <= 1e-8 * max(1.0, sh["coarse"]["scale"]))
        checks["subharmonic_nonnegative"] = bool(sh["nonnegative"])
        checks["subharmonic_contract"] = sh["ratio"] <= tol["contract"]
        checks["probe_residual"] = max(p.residual for p in probes) <= 1e-8

        g = probes[0].grid
        o = probes[0].op

        def probe_for(size, g=g, o=o):
            cube = centered_cube(g, [g.N // 2] * 2, size)
            return local_solution(o, cube, boundary=data), cube

        suite = scale_suite(probe_for, [2, 4, 8])
        res["suite"] = {"rows": suite.rows,
                        "spread": {rid: suite.spread(rid) for rid in suite.ids()}}
        write_csv(out / "suite.csv", ["id", "size", "R", "k", "constant"],
                  [[r["id"], r["size"], r["R"], r.get("k", ""), r.get("constant")] for r in suite.rows])
    return res, checks


RUNNERS = {"sweep": task_sweep, "czd": task_czd, "gauge": task_gauge,
           "weights": task_weights, "check": task_check, "kernel": task_kernel}


def run(config: dict, out: Path | None = None) -> tuple[dict, int]:
    """Run one resolved config; returns ``(report, exit code)`` and writes the report."""
    cfg = resolve_config(config)
    out = Path(out or cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        results, checks = RUNNERS[cfg["task"]](cfg, out)
        error = None
    except InvariantFailure as e:
        results, checks, error = {}, {"run": False}, str(e)
    report = {"schema": SCHEMA_VERSION, "version": __version__, "task": cfg["task"],
              "config": cfg, "results": results, "checks": checks}
    if error:
        report["error"] = error
    write_json(out / "report.json", report)
    return report, 0 if all(checks.values()) else 1


# ---------------------------------------------------------------------------
# compare

def _leaves(obj, prefix=""):
    if isinstance(obj, dict):
        for k in sorted(obj):
            yield from _leaves(obj[k], f"{prefix}/{k}" if prefix else str(k))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _leaves(v, f"{prefix}[{i}]")
    elif isinstance(obj, (int, float)) and not isinstance(obj, bool):
        yield prefix, float(obj)


def compare(a: dict, b: dict) -> dict:
    """Relative differences of every numeric result; for sweeps also a refinement-ratio table."""
    if a.get("task") != b.get("task"):
        raise ConfigError("task", f"cannot compare {a.get('task')!r} with {b.get('task')!r}")
    la, lb = dict(_leaves(a.get("results", {}))), dict(_leaves(b.get("results", {})))
    diff = {}
    for k in sorted(set(la) & set(lb)):
        x, y = la[k], lb[k]
        if x != y:
            diff[k] = abs(x - y) / max(abs(x), abs(y), 1e-300)
    out = {"task": a["task"], "differences": diff,
           "only_in_a": sorted(set(la) - set(lb)), "only_in_b": sorted(set(lb) - set(la))}
    if a["task"] == "sweep":
        table = {}
        for rep, tag in ((a, "a"), (b, "b")):
            for r in rep["results"].get("rows", []):
                key = f"{r['transform']}|p={r['p']:g}|D={r['domain']:g}"
                table.setdefault(key, {})[f"{tag}:{r['resolution']}"] = r["norm"]
        ratios = {}
        for key, cells in table.items():
            ra = sorted((int(c.split(":")[1]), v) for c, v in cells.items() if c.startswith("a:"))
            rb = sorted((int(c.split(":")[1]), v) for c, v in cells.items() if c.startswith("b:"))
            if ra and rb:
                ratios[key] = {"a": ra[-1], "b": rb[-1], "ratio": rb[-1][1] / ra[-1][1]}
        out["refinement"] = ratios
    return out


# ---------------------------------------------------------------------------
# argument parsing

def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON or INI config; flags override its fields")
    p.add_argument("--out", help="output directory (default from config)")
    p.add_argument("--n", type=int, help="dimension (2 or 3)")
    p.add_argument("--N", type=int, nargs="+", dest="resolutions", help="nodes per side")
    p.add_argument("--domain", type=float, nargs="+", dest="domains", help="physical side lengths")
    p.add_argument("--potential", help="potential family: const, bracket or power")
    p.add_argument("--gamma", type=float, help="growth exponent of the potential")
    p.add_argument("--field", dest="field_kind",
                   help="magnetic field: none, from_potential, constant or polynomial")
    p.add_argument("--c", type=float, help="field strength factor for from_potential")
    p.add_argument("--b", type=float, help="constant field strength")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--force", action="store_true", help="sweep even when the control check fails")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="magriesz", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in (("sweep", "L^p norm sweep of Riesz-type transforms"),
                           ("czd", "Calderon-Zygmund decomposition with certificate"),
                           ("gauge", "bounded gauge on a constant-field cube"),
                           ("weights", "reverse Hoelder, A-infinity and control constants"),
                           ("check", "exact identities and local inequality suite"),
                           ("kernel", "Green kernel decay and domination")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        if name == "sweep":
            p.add_argument("--p", type=float, nargs="+", dest="p_list", help="exponents")
            p.add_argument("--transform", nargs="+", dest="transforms", help="transform names")
        if name == "czd":
            p.add_argument("--f", help="gauss, power, or a .npy/.csv field")
            p.add_argument("--omega", help="'potential' or a .npy/.csv weight field")
            p.add_argument("--alpha", type=float, help="height (default: percentile of Mf)")
            p.add_argument("--percentile", type=float, help="percentile used when alpha is absent")
            p.add_argument("--p", type=float, dest="cz_p", help="exponent in [1, 2)")
            p.add_argument("--sigma", type=float, help="width of the gauss test function")
        if name == "gauge":
            p.add_argument("--size", type=int, help="cube size in nodes")
        if name == "kernel":
            p.add_argument("--lam0", type=float, help="spectral shift")
    r = sub.add_parser("run", help="run a task from a config file")
    r.add_argument("config", help="JSON or INI config file")
    r.add_argument("--out", help="output directory")
    c = sub.add_parser("compare", help="compare two reports of the same task")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--out", help="write the diff as JSON here")
    return ap


def _from_args(args) -> dict:
    cfg = load_config(args.config) if getattr(args, "config", None) else {}
    cfg["task"] = args.command
    simple = ("n", "resolutions", "domains", "seed", "p_list", "transforms")
    for k in simple:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    if getattr(args, "force", False):
        cfg["force"] = True
    if args.potential is not None:
        cfg.setdefault("potential", {})
        cfg["potential"] = {"name": args.potential}
    if args.gamma is not None:
        cfg.setdefault("potential", dict(DEFAULTS["potential"]))["gamma"] = args.gamma
    if args.field_kind is not None:
        cfg["field"] = {"kind": args.field_kind}
    for k in ("c", "b"):
        if getattr(args, k, None) is not None:
            cfg.setdefault("field", {"kind": "none"})[k] = getattr(args, k)
    if args.command == "gauge":
        if args.b is not None:
            cfg.setdefault("gauge", {})["b"] = args.b
        if args.size is not None:
            cfg.setdefault("gauge", {})["size"] = args.size
    if args.command == "czd":
        cz = cfg.setdefault("czd", {})
        for src, dst in (("f", "f"), ("omega", "omega"), ("alpha", "alpha"),
                         ("percentile", "percentile"), ("cz_p", "p"), ("sigma", "sigma")):
            v = getattr(args, src)
            if v is not None:
                cz[dst] = v
    if args.command == "kernel" and args.lam0 is not None:
        cfg.setdefault("kernel", {})["lam0"] = args.lam0
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "compare":
            diff = compare(read_json(args.a), read_json(args.b))
            if args.out:
                write_json(args.out, diff)
            sys.stdout.write(dumps(diff))
            return 0
        if args.command == "run":
            cfg = load_config(args.config)
            report, code = run(cfg, args.out)
        else:
            report, code = run(_from_args(args), args.out)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    for name, ok in sorted(report["checks"].items()):
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    if "error" in report:
        print(f"error: {report['error']}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
