"""Local solutions of ``Hu = f`` and the local inequality suite.

Probes are built two ways: a column of the inverse with the source kept away
from ``4Q``, or a solve on a block with pinned boundary values. The checks
report empirical constants (left side over right side without constant);
nothing is compared against a theoretical constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse.linalg as spla

from .grid import Cube, Grid, covariant_gradient, sobolev_conjugate
from .operators import HOperator
from .parallel import pmap


@dataclass
class SolutionProbe:
    op: HOperator
    u: np.ndarray
    f: np.ndarray                     # H u, as computed
    cube: Cube                        # Hu = 0 holds on the nodes of 4Q
    mode: str                         # "source" | "boundary"
    solved: np.ndarray                # mask of nodes where the equation is imposed
    residual: float

    @property
    def grid(self) -> Grid:
        return self.op.grid


def _block(grid: Grid, lo, hi) -> tuple:
    return tuple(slice(int(a), int(b)) for a, b in zip(lo, hi))


def local_solution(op: HOperator, cube: Cube, source: np.ndarray | None = None,
                   boundary: Callable | np.ndarray | None = None) -> SolutionProbe:
    """Solution of ``Hu = 0`` on the nodes of ``4Q``.

    With ``source`` the probe is ``u = H^{-1} f`` and ``f`` must vanish on
    ``4Q``. With ``boundary`` (a callable of positions or a node array) the
    values are pinned on the layer just outside ``4Q`` and the interior
    system is solved; ``u`` is zero elsewhere.
    """
    grid = op.grid
    if (source is None) == (boundary is None):
        raise ValueError("give exactly one of source or boundary data")
    if cube.leaves_grid(4):
        raise ValueError("4Q leaves the grid")
    lo, hi = cube.bounds(4)
    mask4 = np.zeros(grid.shape, dtype=bool)
    mask4[_block(grid, lo, hi)] = True
    if source is not None:
        f = grid.check_field(np.asarray(source), "source").astype(complex)
        if np.any(f[mask4] != 0):
            raise ValueError("the source does not vanish on 4Q")
        u = op.solve(f)
        Hu = op.matvec(u)
        scale = max(float(np.max(np.abs(u))), 1e-300)
        res = float(np.max(np.abs(Hu[mask4]))) / scale
        return SolutionProbe(op, u, Hu, cube, "source", mask4, res)

    olo, ohi = lo - 1, hi + 1
    if np.any(olo < 0) or np.any(ohi > grid.N):
        raise ValueError("no room for the boundary layer around 4Q")
    outer = np.zeros(grid.shape, dtype=bool)
    outer[_block(grid, olo, ohi)] = True
    layer = outer & ~mask4
    if callable(boundary):
        g = np.asarray(boundary(grid.coords()), dtype=complex)
    else:
        g = np.asarray(boundary, dtype=complex)
        if g.shape != grid.shape:
            raise ValueError("boundary array must be a node field")
    I = np.flatnonzero(mask4.ravel())
    B = np.flatnonzero(layer.ravel())
    H = op.H.tocsr()
    A = H[I][:, I].tocsc()
    rhs = -(H[I][:, B] @ g.ravel()[B])
    try:
        lu = spla.splu(A)
    except RuntimeError as e:
        raise ValueError(f"interior system is singular: {e}") from None
    x = lu.solve(rhs)
    x = x + lu.solve(rhs - A @ x)
    u = np.zeros(grid.size, dtype=complex)
    u[B] = g.ravel()[B]
    u[I] = x
    u = u.reshape(grid.shape)
    Hu = op.matvec(u)
    scale = max(float(np.max(np.abs(u))), 1e-300)
    res = float(np.max(np.abs(Hu[mask4]))) / scale
    return SolutionProbe(op, u, Hu, cube, "boundary", mask4, res)


# ---------------------------------------------------------------------------
# helpers on cubes

def _sel(cube: Cube, lam: float) -> tuple:
    if lam != 1 and cube.leaves_grid(lam):
        raise ValueError(f"{lam:g}Q leaves the grid")
    return cube.dilated_slices(lam)


def _avg(x: np.ndarray, cube: Cube, lam: float = 1.0) -> float:
    return float(np.mean(x[_sel(cube, lam)]))


def _lu_modulus(probe: SolutionProbe) -> np.ndarray:
    D = covariant_gradient(probe.u, probe.op.theta, probe.grid)
    return np.sqrt(np.sum(np.abs(D) ** 2, axis=0))


def _power_mean(x: np.ndarray, cube: Cube, lam: float, r: float) -> float:
    blk = np.abs(x[_sel(cube, lam)])
    if math.isinf(r):
        return float(blk.max())
    return float(np.mean(blk**r)) ** (1 / r)


def _ratio(lhs: float, rhs: float) -> float | None:
    if rhs == 0:
        if lhs == 0:
            return None
        return math.inf
    return lhs / rhs


# ---------------------------------------------------------------------------
# energy and subharmonicity

def caccioppoli_check(probe: SolutionProbe, cube: Cube) -> dict:
    """``int_Q |Lu|^2 + V|u|^2`` against ``int_2Q |f||u| + R^-2 int_2Q |u|^2``."""
    vol = probe.grid.cell_volume
    u, V = probe.u, probe.op.V
    Lu = _lu_modulus(probe)
    q1, q2 = _sel(cube, 1), _sel(cube, 2)
    lhs = vol * float(np.sum(Lu[q1] ** 2 + V[q1] * np.abs(u[q1]) ** 2))
    rhs = vol * float(np.sum(np.abs(probe.f[q2]) * np.abs(u[q2]))
                      + np.sum(np.abs(u[q2]) ** 2) / cube.R**2)
    c = _ratio(lhs, rhs)
    if c is not None and math.isinf(c):
        raise ValueError("positive energy with a vanishing right side")
    return {"id": "caccioppoli", "R": cube.R, "lhs": lhs, "rhs": rhs, "constant": c}


def discrete_laplacian(F: np.ndarray, grid: Grid) -> np.ndarray:
    """Standard ``2n+1`` point Laplacian on interior nodes (edges padded with nan)."""
    out = np.full(F.shape, np.nan)
    inner = tuple(slice(1, -1) for _ in range(grid.n))
    acc = -2 * grid.n * F[inner]
    for j in range(grid.n):
        up = [slice(1, -1)] * grid.n
        dn = [slice(1, -1)] * grid.n
        up[j] = slice(2, None)
        dn[j] = slice(0, -2)
        acc = acc + F[tuple(up)] + F[tuple(dn)]
    out[inner] = acc / grid.h**2
    return out


def subharmonic_residuals(probe: SolutionProbe, region: np.ndarray | None = None) -> dict:
    """Residuals of ``Delta|u|^2 = 2|Lu|^2 + 2V|u|^2`` on nodes where ``Hu = 0``.

    ``plain`` uses the forward differences only and is first order in h;
    ``symmetric`` averages the forward and backward edges and vanishes up to
    round-off on a lattice solution.
    """
    grid = probe.grid
    u, V = probe.u, probe.op.V
    D = covariant_gradient(u, probe.op.theta, grid)
    fwd = np.abs(D) ** 2
    bwd = np.zeros_like(fwd)
    for j in range(grid.n):
        a = [slice(None)] * grid.n
        b = [slice(None)] * grid.n
        a[j] = slice(1, None)
        b[j] = slice(0, -1)
        bwd[j][tuple(a)] = fwd[j][tuple(b)]
    lap = discrete_laplacian(np.abs(u) ** 2, grid)
    pot = 2 * V * np.abs(u) ** 2
    mask = probe.solved.copy() if region is None else (probe.solved & region)
    mask &= np.isfinite(lap)
    if not mask.any():
        raise ValueError("no interior nodes to test")
    plain = np.abs(lap - 2 * fwd.sum(0) - pot)[mask]
    sym = np.abs(lap - (fwd + bwd).sum(0) - pot)[mask]
    return {"plain": float(plain.max()), "symmetric": float(sym.max()),
            "min_laplacian": float(lap[mask].min()),
            "scale": float(np.max(np.abs(lap[mask]))), "nodes": int(mask.sum())}


def physical_region(grid: Grid, center, side: float) -> np.ndarray:
    """Nodes inside the open box of the given side around ``center``."""
    X = grid.coords()
    return np.all(np.abs(X - np.asarray(center)) < side / 2, axis=-1)


def subharmonic_identity_check(probe: SolutionProbe, fine: SolutionProbe | None = None,
                               center=None, side: float | None = None,
                               tol: float = 1e-10, contract: float = 1 / 1.5) -> dict:
    """Residual and positivity report; with ``fine`` also the refinement ratio.

    Both probes are tested on the same physical box (default: the probe cube).
    """
    q = probe.cube
    center = q.center if center is None else center
    side = q.R if side is None else side
    reg = physical_region(probe.grid, center, side)
    out = {"coarse": subharmonic_residuals(probe, reg)}
    out["nonnegative"] = out["coarse"]["min_laplacian"] >= -tol
    if fine is not None:
        if not fine.grid.h < probe.grid.h:
            raise ValueError("the refinement probe must have a smaller spacing")
        regf = physical_region(fine.grid, center, side)
        if (regf & fine.solved).sum() < 4 ** fine.grid.n:
            raise ValueError("region too small for the refinement pair")
        out["fine"] = subharmonic_residuals(fine, regf)
        out["nonnegative"] = out["nonnegative"] and out["fine"]["min_laplacian"] >= -tol
        r0, r1 = out["coarse"]["plain"], out["fine"]["plain"]
        out["ratio"] = r1 / r0 if r0 > 0 else 0.0
        out["contract"] = out["ratio"] <= contract
    return out


# ---------------------------------------------------------------------------
# mean-value inequalities

def mean_value_check(probe: SolutionProbe, cube: Cube, r: float = 2.0, mu: float = 2.0) -> dict:
    """``sup_Q |u|`` over ``(mean_{mu Q} |u|^r)^{1/r}``."""
    if not 1 < mu <= 2:
        raise ValueError("mu must lie in (1, 2]")
    if not r > 0:
        raise ValueError("r must be positive")
    lhs = _power_mean(probe.u, cube, 1, math.inf)
    rhs = _power_mean(probe.u, cube, mu, r)
    return {"id": "mean_value", "R": cube.R, "r": r, "mu": mu, "lhs": lhs, "rhs": rhs,
            "constant": _ratio(lhs, rhs)}


def weighted_mean_value_check(omega: np.ndarray, F: np.ndarray, grid: Grid, cube: Cube,
                              s: float = 1.0, r: float = 2.0, mu: float = 2.0,
                              tol: float = 1e-10) -> dict:
    """Weighted mean-value ratios for a nonnegative subharmonic ``F``.

    Finite ``r``: ``(mean_Q (w F^s)^r)^{1/r}`` over ``mean_{mu Q} w F^s``.
    Sup form: ``sup_Q F^s * mean_Q w`` over ``mean_{mu Q} w F^s``.
    """
    if not 1 < mu <= 2:
        raise ValueError("mu must lie in (1, 2]")
    F = np.asarray(F, dtype=float)
    w = np.asarray(omega, dtype=float)
    if np.any(F < 0):
        raise ValueError("F must be nonnegative")
    lap = discrete_laplacian(F, grid)
    sl = _sel(cube, 2)
    blk = lap[sl]
    blk = blk[np.isfinite(blk)]
    if blk.size and blk.min() < -tol * max(1.0, float(np.max(np.abs(blk)))):
        raise ValueError(f"F is not subharmonic on 2Q (min Laplacian {blk.min():.3e})")
    wF = w * F**s
    den = _avg(wF, cube, mu)
    out = {"id": "weighted_mean_value", "R": cube.R, "s": s, "r": r, "mu": mu, "rhs": den}
    if math.isinf(r):
        lhs = float(np.max(F[_sel(cube, 1)] ** s)) * _avg(w, cube)
    else:
        lhs = _power_mean(wF, cube, 1, r)
    out["lhs"] = lhs
    out["constant"] = _ratio(lhs, den)
    out["sup_constant"] = _ratio(float(np.max(F[_sel(cube, 1)] ** s)) * _avg(w, cube), den)
    return out


# ---------------------------------------------------------------------------
# suites

@dataclass
class EstimateSuiteReport:
    rows: list = field(default_factory=list)

    def constants(self, rid: str, **match) -> list:
        return [r["constant"] for r in self.rows if r["id"] == rid
                and all(r.get(k) == v for k, v in match.items()) and r.get("constant") is not None]

    def spread(self, rid: str, **match) -> float:
        c = np.array(self.constants(rid, **match), dtype=float)
        if c.size == 0:
            return float("nan")
        if np.any(c <= 0) or not np.all(np.isfinite(c)):
            return float("inf")
        return float(c.max() / c.min())

    def bounded(self, rid: str, limit: float = 3.0, **match) -> bool:
        s = self.spread(rid, **match)
        return bool(np.isfinite(s) and s <= limit)

    def ids(self) -> list:
        return sorted({r["id"] for r in self.rows})

    def to_dict(self) -> dict:
        return {"rows": self.rows}


def _decay(cube: Cube, V: np.ndarray, k: float) -> tuple[float, float]:
    m = _avg(V, cube)
    return m, (1 + cube.R**2 * m) ** k


def reverse_holder_suite(probe: SolutionProbe, cube: Cube, q: float,
                         ks: Sequence[float] = (1.0,), deltas: Sequence[float] = (2.0, 1.0),
                         mu: float = 2.0) -> EstimateSuiteReport:
    """Reverse Hoelder rows for ``V^{1/2}u`` and ``Lu`` on ``Q``.

    ``q`` is the reverse Hoelder exponent of V; ``q* = nq/(n-q)`` below the
    dimension and sup norms from ``q >= n`` on. Rows record ``q`` and carry a
    ``skipped`` reason when ``q`` is outside their range.
    """
    if cube.leaves_grid(4):
        raise ValueError("4Q leaves the grid")
    n = probe.grid.n
    u, V = probe.u, probe.op.V
    sv = np.sqrt(V) * np.abs(u)
    Lu = _lu_modulus(probe)
    qs = sobolev_conjugate(q, n)
    rows = []
    base = {"R": cube.R, "q": q}

    lhs = _power_mean(sv, cube, 1, 2 * q)
    rhs = _power_mean(sv, cube, 3, 2)
    rows.append({**base, "id": "potential_rh", "lhs": lhs, "rhs": rhs, "constant": _ratio(lhs, rhs)})

    energy = np.sqrt(Lu**2 + V * np.abs(u) ** 2)
    top = _power_mean(Lu, cube, 1, qs)
    for k in ks:
        _, dk = _decay(cube, V, k)
        lhs = top * dk
        rhs = _power_mean(energy, cube, 3, 2)
        rows.append({**base, "id": "gradient_rh_decay", "k": k, "q_star": qs,
                     "lhs": lhs, "rhs": rhs, "constant": _ratio(lhs, rhs)})
    for d in deltas:
        row = {**base, "id": "gradient_rh", "delta": d, "mu": mu, "q_star": qs}
        if q < n / 2:
            row.update(constant=None, skipped="q below n/2")
        else:
            lhs, rhs = top, _power_mean(Lu, cube, mu, d)
            row.update(lhs=lhs, rhs=rhs, constant=_ratio(lhs, rhs))
        rows.append(row)
    return EstimateSuiteReport(rows)


def decay_probe(probe: SolutionProbe, cube: Cube, mu: float = 1.5, mu2: float = 3.0,
                ks: Sequence[float] = (0.0, 1.0, 2.0), q: float = 2.0,
                p: float | None = None) -> EstimateSuiteReport:
    """Decay rows: each constant is the left side times ``(1 + R^2 mean_Q V)^k`` over the right side."""
    if not 1 <= mu < mu2 <= 4:
        raise ValueError("need 1 <= mu < mu' <= 4")
    if cube.leaves_grid(mu2):
        raise ValueError("cube chain exceeds the grid")
    n = probe.grid.n
    u, V = probe.u, probe.op.V
    Lu = _lu_modulus(probe)
    au2 = np.abs(u) ** 2
    en = Lu**2 + V * au2
    p = 2.0 * n if p is None else p
    qs = sobolev_conjugate(q, n)
    mu_small = min(mu, 2.0) if mu > 1 else 1.5
    rows = []
    for k in ks:
        mV, dk = _decay(cube, V, k)
        base = {"R": cube.R, "k": k, "q": q}
        weighted = (cube.R * mV) ** 2 * _avg(au2, cube)
        cand = [
            ("nesting_u", _avg(au2, cube, mu), _avg(au2, cube, mu2)),
            ("nesting_energy", _avg(en, cube, mu), _avg(en, cube, mu2)),
            ("potential_mass", weighted, _avg(V * au2, cube, mu)),
            ("gradient_mass", weighted, _power_mean(Lu, cube, mu_small, p) ** 2),
        ]
        for rid, lhs, rhs in cand:
            rows.append({**base, "id": rid, "lhs": lhs * dk, "rhs": rhs,
                         "constant": _ratio(lhs * dk, rhs)})
        sup_u = _power_mean(probe.u, cube, mu_small, math.inf)
        lhs = cube.R * _power_mean(Lu, cube, 1, qs) * dk
        rows.append({**base, "id": "gradient_sup", "q_star": qs, "lhs": lhs, "rhs": sup_u,
                     "constant": _ratio(lhs, sup_u)})
        row = {**base, "id": "gradient_controls_mass"}
        if q < n / 2:
            row.update(constant=None, skipped="q below n/2")
        else:
            rhs = _avg(Lu**2, cube, mu_small)
            row.update(lhs=weighted * dk, rhs=rhs, constant=_ratio(weighted * dk, rhs))
        rows.append(row)
    return EstimateSuiteReport(rows)


def scale_suite(probe_for: Callable[[int], tuple], sizes: Sequence[int], q: float = 2.0,
                ks: Sequence[float] = (1.0,)) -> EstimateSuiteReport:
    """Run the inequality rows on cubes of several sizes; ``probe_for(size)`` returns ``(probe, cube)``."""
    def one(size):
        probe, cube = probe_for(size)
        rows = [caccioppoli_check(probe, cube), mean_value_check(probe, cube, 2.0, 2.0),
                mean_value_check(probe, cube, 0.5, 2.0)]
        rows += reverse_holder_suite(probe, cube, q, ks).rows
        rows += decay_probe(probe, cube, ks=ks, q=q).rows
        for r in rows:
            r["size"] = size
        return rows

    rows = []
    for part in pmap(one, list(sizes)):
        rows.extend(part)
    return EstimateSuiteReport(rows)
