"""Riesz-transform matrices, induced p-norm estimates and boundedness sweeps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Cube, Grid, sobolev_conjugate
from .operators import HOperator, assemble, default_shift, function_matrix
from .parallel import pmap

TRANSFORMS = {
    "L H^-1/2": ("j",),
    "V^1/2 H^-1/2": (),
    "H0^1/2 H^-1/2": (),
    "L L H^-1": ("s", "k"),
    "V^1/2 L H^-1": ("j",),
    "V H^-1": (),
    "H0 H^-1": (),
    "L H^-1 L*": ("j", "k"),
    "L H^-1 V^1/2": ("j",),
    "V^1/2 H^-1 V^1/2": (),
    "V^1/2 H^-1 L*": ("k",),
    "H^iy": ("y",),
}

BATTERY_VERSION = "battery-v1"


@dataclass(frozen=True)
class TransformSpec:
    name: str
    j: int = 0
    k: int = 0
    s: int = 0
    y: float = 0.0

    def __post_init__(self):
        if self.name not in TRANSFORMS:
            raise ValueError(f"unknown transform {self.name!r}; choose from {sorted(TRANSFORMS)}")
        for attr in ("j", "k", "s"):
            if getattr(self, attr) < 0:
                raise ValueError(f"index {attr} must be nonnegative")

    def check(self, n: int):
        for attr in TRANSFORMS[self.name]:
            if attr != "y" and not getattr(self, attr) < n:
                raise ValueError(f"index {attr}={getattr(self, attr)} out of range for n={n}")

    @property
    def label(self) -> str:
        parts = [f"{a}={getattr(self, a)}" for a in TRANSFORMS[self.name]]
        return self.name + (f"[{','.join(parts)}]" if parts else "")


class RieszContext:
    """Spectral functions of ``H`` (and of ``H_0 = H(a, 0)``) shared by transforms."""

    def __init__(self, op: HOperator, lam0: float | None = None):
        self.op = op
        self.lam0 = default_shift(op) if lam0 is None else float(lam0)
        self._cache: dict = {}
        self._h0: HOperator | None = None

    @property
    def grid(self) -> Grid:
        return self.op.grid

    def fn(self, name: str, y: float = 0.0) -> np.ndarray:
        key = (name, y)
        if key not in self._cache:
            self._cache[key] = function_matrix(self.op, name, self.lam0, y=y)
        return self._cache[key]

    @property
    def H0(self) -> HOperator:
        if self._h0 is None:
            self._h0 = assemble(self.grid, self.op.theta, None, self.op.cap)
        return self._h0

    def sqrtV(self) -> sp.dia_matrix:
        return sp.diags(np.sqrt(self.op.V.ravel()))

    def Vdiag(self) -> sp.dia_matrix:
        return sp.diags(self.op.V.ravel())


def transform_matrix(ctx: RieszContext, spec: TransformSpec) -> np.ndarray:
    """Dense matrix of a transform; ``L`` is the forward covariant difference."""
    spec.check(ctx.grid.n)
    L = ctx.op.L
    nm = spec.name
    if nm == "L H^-1/2":
        return L[spec.j] @ ctx.fn("inv_sqrt")
    if nm == "V^1/2 H^-1/2":
        return ctx.sqrtV() @ ctx.fn("inv_sqrt")
    if nm == "H0^1/2 H^-1/2":
        return function_matrix(ctx.H0, "sqrt") @ ctx.fn("inv_sqrt")
    if nm == "L L H^-1":
        return L[spec.s] @ (L[spec.k] @ ctx.fn("inv"))
    if nm == "V^1/2 L H^-1":
        return ctx.sqrtV() @ (L[spec.j] @ ctx.fn("inv"))
    if nm == "V H^-1":
        return ctx.Vdiag() @ ctx.fn("inv")
    if nm == "H0 H^-1":
        return ctx.H0.H @ ctx.fn("inv")
    if nm == "L H^-1 L*":
        return L[spec.j] @ np.asarray(ctx.fn("inv") @ L[spec.k].conj().T)
    if nm == "L H^-1 V^1/2":
        return L[spec.j] @ (ctx.fn("inv") @ ctx.sqrtV())
    if nm == "V^1/2 H^-1 V^1/2":
        return ctx.sqrtV() @ (ctx.fn("inv") @ ctx.sqrtV())
    if nm == "V^1/2 H^-1 L*":
        return ctx.sqrtV() @ np.asarray(ctx.fn("inv") @ L[spec.k].conj().T)
    if nm == "H^iy":
        return ctx.fn("imag_power", y=spec.y)
    raise AssertionError(nm)


# ---------------------------------------------------------------------------
# p-norms

@dataclass
class NormEstimate:
    value: float
    p: float
    method: str
    iterations: int = 0
    converged: bool = True
    transcript: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"value": self.value, "p": self.p, "method": self.method,
                "iterations": self.iterations, "converged": self.converged}


def lp_norm(x: np.ndarray, p: float, axis=0, weight: float = 1.0):
    """h-weighted discrete L^p norm (``weight`` is the cell volume)."""
    a = np.abs(x)
    if math.isinf(p):
        return np.max(a, axis=axis)
    return (weight * np.sum(a**p, axis=axis)) ** (1.0 / p)


def _dual(y: np.ndarray, p: float) -> np.ndarray:
    """Unit vector in the dual norm attaining ``<z, y> = ||y||_p`` (columnwise)."""
    a = np.abs(y)
    nrm = lp_norm(y, p)
    nrm = np.where(nrm > 0, nrm, 1.0)
    if np.iscomplexobj(y):
        sgn = np.where(a > 0, y / np.where(a > 0, a, 1.0), 0.0)
    else:
        sgn = np.sign(y)
    return (a / nrm) ** (p - 1) * sgn


def _exact_norm(T, p: float) -> float:
    A = abs(T) if sp.issparse(T) else np.abs(T)
    if p == 1:
        return float(np.max(np.asarray(A.sum(axis=0))))
    if math.isinf(p):
        return float(np.max(np.asarray(A.sum(axis=1))))
    # p == 2
    if min(T.shape) <= 600:
        Td = T.toarray() if sp.issparse(T) else T
        return float(np.linalg.norm(Td, 2))
    try:
        s = spla.svds(T, k=1, return_singular_vectors=False, tol=1e-12, maxiter=20000,
                      random_state=np.random.default_rng(0))
        return float(s[0])
    except Exception:
        Td = T.toarray() if sp.issparse(T) else T
        return float(np.linalg.norm(Td, 2))


def power_norm(T, p: float, starts: np.ndarray, tol: float = 1e-6, maxiter: int = 200):
    """Dual power iteration for the induced p-norm, batched over start columns.

    Returns ``(best value, iterations, converged flag, transcript)``. Every
    iterate is a certified lower bound because it is an attained ratio.
    """
    q = p / (p - 1)
    X = starts / lp_norm(starts, p)[None, :]
    TH = T.conj().T
    best = 0.0
    prev = np.zeros(X.shape[1])
    transcript = []
    active = np.ones(X.shape[1], dtype=bool)
    it = 0
    for it in range(1, maxiter + 1):
        Y = T @ X[:, active]
        vals = lp_norm(Y, p)
        best = max(best, float(np.max(vals)))
        transcript.append(best)
        Z = TH @ _dual(Y, p)
        Xn = _dual(Z, q)
        change = np.abs(vals - prev[active]) / np.maximum(vals, 1e-300)
        prev[active] = vals
        X[:, active] = Xn
        idx = np.flatnonzero(active)
        active[idx[change < tol]] = False
        if not active.any():
            break
    return best, it, not active.any(), transcript


def pnorm_estimate(T, p: float, method: str = "auto", starts: int = 8, seed: int = 0,
                   extra_starts: np.ndarray | None = None, tol: float = 1e-6,
                   maxiter: int = 200, probes: int = 10000) -> NormEstimate:
    """Induced ``L^p -> L^p`` norm of a square matrix on the h-weighted lattice.

    The cell volume cancels for square operators, so plain l^p norms are used.
    ``method`` is ``exact`` (p in {1, 2, inf}), ``power`` (dual power
    iteration, a certified lower bound), ``random`` (random-probe lower
    bound) or ``auto`` (exact when available, else power).
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    exact_ok = p in (1, 2) or math.isinf(p)
    if method == "auto":
        method = "exact" if exact_ok else "power"
    if method == "exact":
        if not exact_ok:
            raise ValueError("exact norms exist only for p in {1, 2, inf}")
        return NormEstimate(_exact_norm(T, p), p, "exact")
    M = T.shape[1]
    rng = np.random.default_rng(seed)
    complex_ = np.iscomplexobj(T.data if sp.issparse(T) else T)

    def rand(k):
        R = rng.standard_normal((M, k))
        if complex_:
            R = R + 1j * rng.standard_normal((M, k))
        return R

    if method == "random":
        best = 0.0
        done = 0
        while done < probes:
            k = min(2048, probes - done)
            R = rand(k)
            best = max(best, float(np.max(lp_norm(T @ R, p) / lp_norm(R, p))))
            done += k
        return NormEstimate(best, p, "random", iterations=probes, converged=False)
    if method != "power":
        raise ValueError(f"unknown method {method!r}")
    if p == 1 or math.isinf(p):
        return NormEstimate(_exact_norm(T, p), p, "exact")
    cols = [np.ones((M, 1)), rand(starts)]
    if extra_starts is not None:
        cols.append(np.asarray(extra_starts).reshape(M, -1))
    S = np.concatenate(cols, axis=1).astype(complex if complex_ else float)
    val, it, conv, tr = power_norm(T, p, S, tol, maxiter)
    return NormEstimate(val, p, "power", it, conv, tr)


# ---------------------------------------------------------------------------
# test functions

def battery(grid: Grid, seed: int = 0, n_random: int = 2, n_delta: int = 2) -> dict:
    """Versioned test-function battery: random fields, Gaussians, waves, deltas."""
    rng = np.random.default_rng(seed)
    X = grid.coords()
    c = grid.center()
    L = grid.side_length
    r2 = np.sum((X - c) ** 2, axis=-1)
    out = {}
    for i in range(n_random):
        out[f"random{i}"] = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    for w in (L / 16, L / 8, L / 4):
        out[f"gauss{w:.3g}"] = np.exp(-r2 / (2 * w * w)).astype(complex)
    for kf in (1, 3, 6):
        phase = 2 * np.pi * kf * np.sum(X - np.array(grid.origin), axis=-1) / L
        out[f"wave{kf}"] = np.exp(1j * phase) * np.exp(-r2 / (2 * (L / 4) ** 2))
    mid = grid.N // 2
    for i in range(n_delta):
        idx = tuple([mid + i * max(1, grid.N // 8)] * grid.n)
        d = np.zeros(grid.shape, dtype=complex)
        d[idx] = 1.0
        out[f"delta{i}"] = d
    return out


# ---------------------------------------------------------------------------
# sweeps

def predicted_ranges(q: float, n: int) -> dict:
    """Upper ends of the admissible p-ranges implied by an RH_q exponent (before the epsilon margin)."""
    qs = sobolev_conjugate(q, n) if math.isfinite(q) else math.inf
    if math.isinf(q):
        vl = math.inf
    elif q < n:
        vl = 2 * q * n / (3 * n - 2 * q) if 3 * n > 2 * q else math.inf
    else:
        vl = 2 * q
    return {"q": q, "q_star": qs, "first_order": qs, "V^1/2 L H^-1": vl,
            "V H^-1": q, "V^1/2 H^-1/2": 2 * q, "second_order": q}


@dataclass
class SweepRow:
    transform: str
    p: float
    resolution: int
    domain: float
    norm: float
    method: str
    iterations: int
    converged: bool

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class NormSweepReport:
    rows: list
    flags: dict
    ratios: dict
    predicted: dict
    reverse: list = field(default_factory=list)
    reverse_flags: dict = field(default_factory=dict)
    control: dict | None = None
    exact_failures: list = field(default_factory=list)
    battery_version: str = BATTERY_VERSION
    shifts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"rows": [r.to_dict() for r in self.rows],
                "flags": self.flags, "ratios": self.ratios, "predicted": self.predicted,
                "reverse": self.reverse, "reverse_flags": self.reverse_flags,
                "control": self.control, "exact_failures": self.exact_failures,
                "battery_version": self.battery_version, "shifts": self.shifts}


def stability_flag(series_res: list, series_dom: list, ok: float = 1.2, grow: float = 2.0):
    """Flag from the growth of the last refinement along each axis."""
    ratios = []
    for s in (series_res, series_dom):
        if len(s) >= 2 and s[-2] > 0:
            ratios.append(s[-1] / s[-2])
    if not ratios:
        return "inconclusive", ratios
    if any(r >= grow for r in ratios):
        return "growth", ratios
    if all(r <= ok for r in ratios):
        return "consistent", ratios
    return "inconclusive", ratios


def sweep_grid(N: int, domain: float, n: int = 2) -> Grid:
    """Dirichlet grid with ``N`` nodes per side on a cube of side ``domain`` centred at 0."""
    h = domain / N
    return Grid(n, N, h, "dirichlet", -0.5 * (N - 1) * h)


def reverse_ratio(ctx: RieszContext, f: np.ndarray, p: float) -> float:
    """``||H^{1/2} f||_p / (||Lf||_p + ||V^{1/2} f||_p)``."""
    v = np.asarray(f, dtype=complex).ravel()
    top = lp_norm(ctx.fn("sqrt") @ v, p)
    Lf = np.sqrt(sum(np.abs(Lj @ v) ** 2 for Lj in ctx.op.L))
    bot = lp_norm(Lf, p) + lp_norm(np.sqrt(ctx.op.V.ravel()) * v, p)
    return float(top / bot)


def theorem_sweep(potential, field, transforms, p_list, resolutions, domains, n: int = 2,
                  q: float = math.inf, force: bool = False, seed: int = 0,
                  control_levels=None, starts: int = 6) -> NormSweepReport:
    """Norms of each transform over a (resolution, domain) grid for every p.

    ``potential`` is a :class:`Potential` and ``field`` a
    :class:`MagneticField` (or None for zero field). The control condition
    is checked first on the largest, finest grid; a family with an
    infinite control constant is refused unless ``force`` is set.
    """
    from .families import phases_from_potential
    from .weights import control_from_field

    if not p_list:
        raise ValueError("empty p list")
    specs = [t if isinstance(t, TransformSpec) else TransformSpec(*t) if isinstance(t, tuple)
             else TransformSpec(t) for t in transforms]
    resolutions = sorted(resolutions)
    domains = sorted(domains)
    control = None
    if field is not None:
        g = sweep_grid(resolutions[-1], domains[-1], n)
        levels = control_levels or [lv for lv in range(0, 6) if 2**lv <= g.N]
        rep = control_from_field(field, potential, g, levels)
        control = rep.to_dict()
        finite = math.isfinite(rep.C1) and (rep.C2 is None or math.isfinite(rep.C2))
        if not finite and not force:
            raise ValueError("family violates the control condition; pass force=True to sweep anyway")

    def cell(args):
        N, D = args
        g = sweep_grid(N, D, n)
        theta = None if field is None else phases_from_potential(g, field.vector_potential)
        op = assemble(g, theta, potential.sample(g))
        ctx = RieszContext(op)
        rows = []
        for spec in specs:
            T = transform_matrix(ctx, spec)
            for p in p_list:
                est = pnorm_estimate(T, p, starts=starts, seed=seed)
                rows.append(SweepRow(spec.label, float(p), N, float(D), est.value, est.method,
                                     est.iterations, est.converged))
        bat = battery(g, seed)
        rev = []
        for p in p_list:
            r = max(reverse_ratio(ctx, f, p) for f in bat.values())
            rev.append({"p": float(p), "resolution": N, "domain": float(D), "ratio": r})
        return rows, rev, ctx.lam0

    cells = [(N, D) for D in domains for N in resolutions]
    results = pmap(cell, cells)
    rows, rev, shifts = [], [], {}
    for (N, D), (r, v, lam0) in zip(cells, results):
        rows += r
        rev += v
        shifts[f"{N}x{D:g}"] = lam0
    flags, ratios = {}, {}
    failures = []
    for spec in specs:
        for p in p_list:
            key = f"{spec.label}|p={p:g}"
            val = {(r.resolution, r.domain): r.norm for r in rows
                   if r.transform == spec.label and r.p == p}
            s_res = [val[(N, domains[-1])] for N in resolutions]
            s_dom = [val[(resolutions[-1], D)] for D in domains]
            flags[key], ratios[key] = stability_flag(s_res, s_dom)
            if p == 2 and spec.name in ("L H^-1/2", "V^1/2 H^-1/2"):
                bad = [v for v in val.values() if v > 1 + 1e-8]
                if bad:
                    failures.append({"cell": key, "max": max(bad)})
    rflags = {}
    for p in p_list:
        val = {(r["resolution"], r["domain"]): r["ratio"] for r in rev if r["p"] == p}
        s_res = [val[(N, domains[-1])] for N in resolutions]
        s_dom = [val[(resolutions[-1], D)] for D in domains]
        flag, rr = stability_flag(s_res, s_dom)
        rflags[f"p={p:g}"] = {"flag": flag, "ratios": rr}
    return NormSweepReport(rows, flags, {k: list(v) for k, v in ratios.items()},
                           predicted_ranges(q, n), rev, rflags, control, failures,
                           shifts=shifts)


# ---------------------------------------------------------------------------
# weak type, L^1 and the good-lambda probe

def weak_type_check(ctx: RieszContext, fs: dict, alphas_rel=None, side: str = "riesz") -> dict:
    """Worst ``alpha |{|Tf| > alpha}| / RHS`` over the battery and alpha grid.

    ``side='riesz'`` tests ``T = |L f|`` against ``||H^{1/2} f||_1``;
    ``side='reverse'`` tests ``T = |H^{1/2} f|`` against
    ``int |Lf| + V^{1/2}|f|``. Alphas are fractions of ``max |Tf|``.
    """
    if not fs:
        raise ValueError("empty battery")
    if alphas_rel is None:
        alphas_rel = np.logspace(-3, 0, 13)
    hn = ctx.grid.cell_volume
    worst = 0.0
    rows = []
    for name, f in fs.items():
        v = np.asarray(f, dtype=complex).ravel()
        Lf = np.sqrt(sum(np.abs(Lj @ v) ** 2 for Lj in ctx.op.L))
        Hf = np.abs(ctx.fn("sqrt") @ v)
        if side == "riesz":
            Tf, rhs = Lf, np.sum(Hf) * hn
        elif side == "reverse":
            Tf, rhs = Hf, np.sum(Lf + np.sqrt(ctx.op.V.ravel()) * np.abs(v)) * hn
        else:
            raise ValueError("side must be 'riesz' or 'reverse'")
        top = float(np.max(Tf))
        best = 0.0
        if top > 0 and rhs > 0:
            for a in np.asarray(alphas_rel) * top:
                best = max(best, a * np.count_nonzero(Tf > a) * hn / rhs)
        rows.append((name, best))
        worst = max(worst, best)
    return {"constant": float(worst), "rows": rows, "side": side}


def l1_maximal_check(op: HOperator, H0: HOperator, f: np.ndarray, lam0: float = 0.0) -> tuple:
    """``(sum V|u| / sum|f|, sum|H_0 u| / sum|f|)`` for ``u = (H + lam0)^{-1} f``."""
    u = op.solve(f, lam0).ravel()
    fa = float(np.sum(np.abs(f)))
    if fa == 0:
        raise ValueError("source vanishes")
    r1 = float(np.sum(op.V.ravel() * np.abs(u))) / fa
    r2 = float(np.sum(np.abs(H0.H @ u))) / fa
    return r1, r2


def shen_hypothesis_probe(T: np.ndarray, grid: Grid, cube: Cube, fs: dict, S=None,
                          p0: float = 2.0, q0: float = 2.0, a1: float = 2.0,
                          a2: float = 4.0) -> dict:
    """Smallest ``C`` with ``(avg_Q |Tf|^{q0})^{1/q0} <= C[(avg_{a1 Q}|Tf|^{p0})^{1/p0} + S|f|(x)]`` on Q.

    ``S`` maps a field to a node field (or is None for S = 0). Every battery
    member must vanish on ``a2 Q``.
    """
    inner = cube.dilate_mask(a2)
    q_mask = cube.dilate_mask(1.0)
    m1 = cube.dilate_mask(a1)
    worst = 0.0
    rows = []
    for name, f in fs.items():
        f = np.asarray(f)
        if np.any(np.abs(f[inner]) > 0):
            raise ValueError(f"battery member {name!r} does not vanish on the dilated cube")
        Tf = np.abs(T @ f.ravel()).reshape(grid.shape)
        lhs = _avg_power(Tf[q_mask], q0)
        rhs = _avg_power(Tf[m1], p0)
        if S is not None:
            rhs += float(np.min(np.asarray(S(f))[q_mask]))
        if lhs == 0:
            c = 0.0
        elif rhs == 0:
            c = math.inf
        else:
            c = lhs / rhs
        rows.append((name, c))
        worst = max(worst, c)
    return {"C": worst, "rows": rows}


def _avg_power(a: np.ndarray, s: float) -> float:
    if math.isinf(s):
        return float(np.max(a))
    return float(np.mean(a**s) ** (1 / s))


def far_battery(grid: Grid, cube: Cube, a2: float = 4.0, seed: int = 0) -> dict:
    """Test functions vanishing on ``a2 Q``: masked random fields, far deltas and bumps."""
    rng = np.random.default_rng(seed)
    mask = cube.dilate_mask(a2)
    out = {}
    for i in range(2):
        f = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
        f[mask] = 0
        out[f"random{i}"] = f
    free = np.argwhere(~mask)
    if free.size:
        X = grid.coords()
        for i, idx in enumerate(free[rng.choice(len(free), size=min(3, len(free)), replace=False)]):
            d = np.zeros(grid.shape, dtype=complex)
            d[tuple(idx)] = 1.0
            out[f"delta{i}"] = d
            bump = np.exp(-np.sum((X - X[tuple(idx)]) ** 2, axis=-1) / (2 * (2 * grid.h) ** 2))
            bump = bump.astype(complex)
            bump[mask] = 0
            out[f"bump{i}"] = bump
    return out


def duality_gap(T, p: float, **kw) -> float:
    """Relative gap between the p-norm of T and the dual-exponent norm of T^*."""
    q = math.inf if p == 1 else 1.0 if math.isinf(p) else p / (p - 1)
    a = pnorm_estimate(T, p, **kw).value
    b = pnorm_estimate(T.conj().T, q, **kw).value
    return abs(a - b) / max(a, b)
