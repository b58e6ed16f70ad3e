"""Reverse Holder scans, the field/potential control condition and related weight tools."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .grid import Cube, CubeFamily, Grid, dyadic_cubes
from .parallel import pmap


def block_reduce(values: np.ndarray, size: int, op: str = "mean") -> np.ndarray:
    """Reduce a node array over the disjoint blocks of ``size`` nodes per side.

    Trailing partial blocks are dropped, matching :func:`dyadic_cubes`.
    """
    a = np.asarray(values)
    n = a.ndim
    p = a.shape[0] // size
    a = a[(slice(0, p * size),) * n]
    shape = []
    for _ in range(n):
        shape += [p, size]
    a = a.reshape(shape)
    axes = tuple(range(1, 2 * n, 2))
    if op == "mean":
        return a.mean(axis=axes)
    if op == "max":
        return a.max(axis=axes)
    if op == "sum":
        return a.sum(axis=axes)
    raise ValueError(op)


def _as_levels(grid: Grid, family) -> list[int]:
    if isinstance(family, CubeFamily):
        return [family.level]
    if isinstance(family, int):
        return [family]
    levels = []
    for f in family:
        levels.append(f.level if isinstance(f, CubeFamily) else int(f))
    if not levels:
        raise ValueError("empty cube family")
    return levels


def _level_cubes(grid: Grid, level: int, index) -> Cube:
    s = 2**level
    return Cube(grid, tuple(int(s * i) for i in index), s, level)


@dataclass
class WeightReport:
    q: float
    rh_constant: float
    levels: list
    per_level: dict
    doubling_constant: float
    worst_cube: tuple | None = None
    a_infty_profile: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"q": self.q, "rh_constant": self.rh_constant, "levels": self.levels,
                "per_level": {str(k): v for k, v in self.per_level.items()},
                "doubling_constant": self.doubling_constant,
                "worst_cube": None if self.worst_cube is None else list(self.worst_cube),
                "a_infty_profile": [list(r) for r in self.a_infty_profile]}


def _check_weight(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weight must be finite and nonnegative")
    if not np.any(w > 0):
        raise ValueError("weight vanishes identically")
    return w


def _rh_level(w: np.ndarray, q: float, level: int):
    s = 2**level
    mean = block_reduce(w, s)
    if math.isinf(q):
        top = block_reduce(w, s, "max")
    else:
        top = block_reduce(w**q, s) ** (1.0 / q)
    ratio = np.full(mean.shape, 1.0)
    pos = mean > 0
    ratio[pos] = top[pos] / mean[pos]
    # cubes where the weight vanishes satisfy 0 <= C * 0
    i = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
    return float(ratio[i]), i


def doubling_constant(w: np.ndarray, grid: Grid, levels: Sequence[int]) -> float:
    """``max w(2Q) / w(Q)`` over the scanned cubes (2Q clipped to the grid)."""
    w = _check_weight(w)
    csum = np.pad(w, [(1, 0)] * w.ndim).cumsum(axis=0)
    for ax in range(1, w.ndim):
        csum = csum.cumsum(axis=ax)
    best = 1.0
    for lv in levels:
        for Q in dyadic_cubes(grid, lv):
            inner = w[Q.slices].sum()
            outer = _box_sum(csum, *Q.bounds(2.0))
            if inner <= 0:
                if outer > 0:
                    return math.inf
                continue
            best = max(best, outer / inner)
    return float(best)


def _box_sum(csum, lo, hi) -> float:
    n = len(lo)
    total = 0.0
    for corner in np.ndindex(*(2,) * n):
        idx = tuple(hi[d] if c else lo[d] for d, c in enumerate(corner))
        sign = (-1) ** (n - sum(corner))
        total += sign * csum[idx]
    return float(total)


def rh_constant(omega: np.ndarray, q: float, grid: Grid, family,
                with_doubling: bool = True) -> WeightReport:
    """Smallest ``C`` with ``(avg_Q w^q)^{1/q} <= C avg_Q w`` on the scanned cubes.

    ``q = inf`` compares the node maximum with the mean. ``family`` is a level,
    a list of levels or a list of :class:`CubeFamily`.
    """
    if not q > 1:
        raise ValueError("exponent must exceed 1")
    w = _check_weight(grid.check_field(omega, "weight"))
    levels = _as_levels(grid, family)
    for lv in levels:
        if 2**lv > grid.N:
            raise ValueError(f"level {lv} exceeds the grid")
    res = pmap(lambda lv: _rh_level(w, q, lv), levels)
    per = {lv: r[0] for lv, r in zip(levels, res)}
    lv_best = max(levels, key=lambda lv: per[lv])
    worst = _level_cubes(grid, lv_best, res[levels.index(lv_best)][1]).key()
    dbl = doubling_constant(w, grid, levels) if with_doubling else float("nan")
    return WeightReport(q, max(per.values()), levels, per, dbl, worst)


def ainfty_profile(omega: np.ndarray, s_list: Sequence[float], grid: Grid, family,
                   growth_tol: float = 1.2) -> dict:
    """RH_{1/s} constants of ``w**s`` for each ``s`` in (0, 1).

    The weight is flagged consistent with A-infinity when every constant is
    finite, the doubling constant is finite, and the per-level maxima do not
    grow by more than ``growth_tol`` from the second-finest to the finest
    level.
    """
    w = _check_weight(grid.check_field(omega, "weight"))
    levels = sorted(_as_levels(grid, family))
    rows = []
    consistent = True
    for s in s_list:
        if not 0 < s < 1:
            raise ValueError("each s must lie in (0, 1)")
        rep = _rh_vanishing_aware(w**s, 1.0 / s, levels)
        rows.append((float(s), rep["constant"], rep["per_level"]))
        consistent &= math.isfinite(rep["constant"])
        if len(levels) > 1 and math.isfinite(rep["constant"]):
            fine, prev = rep["per_level"][levels[0]], rep["per_level"][levels[1]]
            consistent &= fine <= growth_tol * prev
    dbl = doubling_constant(w, grid, levels)
    consistent &= math.isfinite(dbl)
    return {"profile": [(s, c) for s, c, _ in rows],
            "per_level": {s: pl for s, _, pl in rows},
            "doubling_constant": dbl, "a_infty_consistent": bool(consistent)}


def _rh_vanishing_aware(w, q, levels):
    # a cube on which the weight vanishes is incompatible with A-infinity
    per = {}
    for lv in levels:
        mean = block_reduce(w, 2**lv)
        if np.any(mean <= 0):
            per[lv] = math.inf
            continue
        per[lv] = float(np.max(block_reduce(w**q, 2**lv) ** (1 / q) / mean))
    return {"constant": max(per.values()), "per_level": per}


def self_improvement_exponent(omega, grid: Grid, family, q_list: Sequence[float],
                              threshold: float) -> float | None:
    """Largest scanned ``q`` whose RH constant stays below ``threshold``."""
    best = None
    for q in sorted(q_list):
        if rh_constant(omega, q, grid, family, with_doubling=False).rh_constant <= threshold:
            best = q
    return best


# ---------------------------------------------------------------------------
# control condition

@dataclass
class ControlReport:
    C1: float
    C2: float | None
    worst_C1: tuple | None
    worst_C2: tuple | None
    per_level_C1: dict
    per_level_C2: dict
    pointwise_C1: float
    pointwise_C2: float | None
    grad_source: str = "analytic"

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else
                    {str(a): b for a, b in v.items()} if isinstance(v, dict) else v)
                for k, v in self.__dict__.items()}


def numerical_gradient_modulus(Bmod_components: np.ndarray, grid: Grid) -> np.ndarray:
    """``sum_{j<k} sum_l |d_l F_jk|`` by centred differences of node samples.

    ``Bmod_components`` has shape ``(npairs,) + grid.shape``; one-sided
    differences at the edges add an O(h) error.
    """
    out = np.zeros(grid.shape)
    for comp in np.asarray(Bmod_components):
        for g in np.gradient(comp, grid.h):
            out += np.abs(g)
    return out


def control_condition_check(B: np.ndarray, gradB: np.ndarray | None, V: np.ndarray,
                            grid: Grid, family, grad_source: str = "analytic") -> ControlReport:
    """Smallest ``C1, C2`` with ``sup_Q|B| <= C1 avg_Q V`` and ``sup_Q|grad B| <= C2 (avg_Q V)^{3/2}``.

    ``B`` and ``gradB`` are the node moduli ``|B|`` and ``|grad B|``.
    """
    B = np.abs(grid.check_field(B, "B"))
    V = grid.check_field(V, "V")
    if np.any(V < 0):
        raise ValueError("potential must be nonnegative")
    G = None if gradB is None else np.abs(grid.check_field(gradB, "grad B"))
    levels = _as_levels(grid, family)
    per1, per2 = {}, {}
    w1 = w2 = None
    best1, best2 = 0.0, 0.0
    for lv in levels:
        s = 2**lv
        mv = block_reduce(V, s)
        if np.any(mv <= 0):
            raise ValueError(f"potential has zero mean on a cube at level {lv}")
        r1 = block_reduce(B, s, "max") / mv
        i1 = np.unravel_index(int(np.argmax(r1)), r1.shape)
        per1[lv] = float(r1[i1])
        if per1[lv] > best1 or w1 is None:
            best1, w1 = per1[lv], _level_cubes(grid, lv, i1).key()
        if G is not None:
            r2 = block_reduce(G, s, "max") / mv**1.5
            i2 = np.unravel_index(int(np.argmax(r2)), r2.shape)
            per2[lv] = float(r2[i2])
            if per2[lv] > best2 or w2 is None:
                best2, w2 = per2[lv], _level_cubes(grid, lv, i2).key()
    pos = V > 0
    pc1 = float(np.max(B[pos] / V[pos])) if np.any(pos) else math.inf
    if np.any(B[~pos] > 0):
        pc1 = math.inf
    pc2 = None
    if G is not None:
        pc2 = float(np.max(G[pos] / V[pos] ** 1.5)) if np.any(pos) else math.inf
    return ControlReport(best1, best2 if G is not None else None, w1, w2, per1, per2,
                         pc1, pc2, grad_source)


def control_from_field(Bfield, Vpot, grid: Grid, family) -> ControlReport:
    """Control check from analytic field and potential objects."""
    X = grid.coords()
    Bm = Bfield.modulus(X)
    V = Vpot(X)
    if Bfield.grad is not None:
        G, src = Bfield.grad_modulus(X), "analytic"
    else:
        F = Bfield(X)
        comps = [F[..., j, k] for j in range(grid.n) for k in range(j + 1, grid.n)]
        G, src = numerical_gradient_modulus(np.array(comps), grid), "numerical"
    return control_condition_check(Bm, G, V, grid, family, src)


# ---------------------------------------------------------------------------
# Fefferman-Phong, Shen scale decay and the dyadic sum

def m_beta(x, beta: float = 0.5):
    """``x`` on [0, 1] and ``x**beta`` above 1."""
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("argument must be nonnegative")
    out = np.where(x <= 1, x, np.maximum(x, 1.0) ** beta)
    return out if out.ndim else float(out)


def local_gradient_modulus(u: np.ndarray, theta: np.ndarray, grid: Grid, cube: Cube) -> np.ndarray:
    """``|Lu|`` at the cube's nodes using only edges inside the cube."""
    sl = cube.slices
    ub = np.asarray(u, dtype=complex)[sl]
    tb = np.asarray(theta)[(slice(None),) + sl]
    acc = np.zeros(ub.shape)
    for j in range(grid.n):
        a = [slice(None)] * grid.n
        b = [slice(None)] * grid.n
        a[j] = slice(0, -1)
        b[j] = slice(1, None)
        d = (np.exp(-1j * tb[j][tuple(a)]) * ub[tuple(b)] - ub[tuple(a)]) / (1j * grid.h)
        acc[tuple(a)] += np.abs(d) ** 2
    return np.sqrt(acc)


def fefferman_phong_ratio(u, theta, omega, grid: Grid, cube: Cube, p: float = 2.0,
                          beta: float = 0.5) -> float:
    """Empirical constant of the improved Fefferman-Phong inequality on ``cube``."""
    if p < 1:
        raise ValueError("p must be at least 1")
    sl = cube.slices
    ub = np.abs(np.asarray(u)[sl])
    wb = np.asarray(omega, dtype=float)[sl]
    hn = grid.cell_volume
    num = (np.sum(local_gradient_modulus(u, theta, grid, cube) ** p) + np.sum(wb * ub**p)) * hn
    R = cube.R
    den = m_beta(R**p * float(np.mean(wb)), beta) / R**p * np.sum(ub**p) * hn
    if den <= 0:
        raise ValueError("denominator vanishes (u or the weight vanishes on the cube)")
    return float(num / den)


_GL_CACHE: dict = {}


def _gauss(order: int):
    if order not in _GL_CACHE:
        t, w = np.polynomial.legendre.leggauss(order)
        _GL_CACHE[order] = (0.5 * t, 0.5 * w)
    return _GL_CACHE[order]


def _box_mean(V: Callable, lo: np.ndarray, side: np.ndarray, order: int) -> np.ndarray:
    """Tensor Gauss means of ``V`` over boxes ``lo + [0, side]``; ``lo`` is (m, n)."""
    t, w = _gauss(order)
    n = lo.shape[-1]
    pts = np.stack(np.meshgrid(*([t] * n), indexing="ij"), -1).reshape(-1, n) + 0.5
    wts = np.prod(np.stack(np.meshgrid(*([w] * n), indexing="ij"), -1).reshape(-1, n), axis=1)
    X = lo[:, None, :] + pts[None, :, :] * side
    return V(X) @ wts


def cube_mean(V: Callable, center, side: float, order: int = 6, depth: int = 30) -> float:
    """Mean of a callable weight over the cube of side ``side`` centred at ``center``.

    The cube is split into nested shells shrinking toward the centre so that
    integrable singularities at the centre are resolved.
    """
    center = np.asarray(center, dtype=float)
    n = center.size
    # shell of Q_r minus Q_{r/2}: the 4^n quarter-side boxes not in the core
    grid4 = np.array(list(np.ndindex(*(4,) * n)))
    shell = grid4[~np.all((grid4 == 1) | (grid4 == 2), axis=1)]
    total = 0.0
    weight = 1.0
    r = float(side)
    for _ in range(depth):
        lo = center - r / 2 + shell * (r / 4)
        total += weight * np.sum(_box_mean(V, lo, r / 4, order)) / 4**n
        weight /= 2**n
        r /= 2
    total += weight * float(_box_mean(V, (center - r / 2)[None], r, order)[0])
    return float(total)


def _mean_source(V, grid: Grid | None):
    if callable(V):
        return lambda y, r: cube_mean(V, y, r)
    if grid is None:
        raise ValueError("node-valued weights need their grid")
    V = np.asarray(V, dtype=float)

    def mean(y, r):
        idx = np.round((np.asarray(y) - np.array(grid.origin)) / grid.h).astype(int)
        half = 0.5 * r / grid.h
        lo = np.maximum(np.floor(idx - half).astype(int) + 1, 0)
        hi = np.minimum(np.ceil(idx + half).astype(int), grid.N)
        lo = np.minimum(lo, idx)
        hi = np.maximum(hi, idx + 1)
        return float(np.mean(V[tuple(slice(a, b) for a, b in zip(lo, hi))]))

    return mean


def shen_alpha_estimate(V, center, pairs: Sequence[tuple], grid: Grid | None = None) -> dict:
    """Largest ``alpha`` with ``r^2 avg_{Q(y,r)} V <= (r/R)^alpha R^2 avg_{Q(y,R)} V`` on all pairs.

    Also returns the log-regression slope of ``r^2 avg V`` against ``r``.
    """
    mean = _mean_source(V, grid)
    alphas, rs, vals = [], [], []
    for r, R in pairs:
        if not 0 < r < R:
            raise ValueError("need 0 < r < R for every pair")
        a, b = r * r * mean(center, r), R * R * mean(center, R)
        if a <= 0 or b <= 0:
            raise ValueError("weight vanishes on a sampled cube")
        alphas.append(math.log(a / b) / math.log(r / R))
        rs += [r, R]
        vals += [a, b]
    slope = float(np.polyfit(np.log(rs), np.log(vals), 1)[0]) if len(set(rs)) > 1 else float("nan")
    alpha = float(min(alphas))
    return {"alpha": alpha, "regression_alpha": slope, "per_pair": alphas,
            "flagged": alpha <= 0}


@dataclass
class DyadicSumReport:
    levels: list
    terms: list
    partial_sums: dict
    total: float

    def growth(self, L1: int, L2: int) -> float:
        return self.partial_sums[L2] / self.partial_sums[L1]


def dyadic_sum(V, center, L: int, grid: Grid | None = None) -> DyadicSumReport:
    """Sum over ``l in [-L, L]`` of ``(4^l avg V)^{1/2} / (1 + 4^l avg V)`` on cubes ``Q(y, 2^l)``.

    ``V`` is either a callable (cube means by quadrature) or node values on
    ``grid``; in the latter case levels whose cube exceeds the grid are
    clipped. Symmetric partial sums for every ``L' <= L`` are recorded.
    """
    mean = _mean_source(V, grid)
    levels = list(range(-L, L + 1))
    if grid is not None and not callable(V):
        levels = [l for l in levels if 2.0**l <= grid.side_length]
    terms = {}
    for l in levels:
        m = mean(center, 2.0**l)
        if m <= 0:
            raise ValueError(f"weight vanishes on the level-{l} cube")
        x = 4.0**l * m
        terms[l] = math.sqrt(x) / (1 + x)
    partial = {}
    for Lp in range(0, L + 1):
        partial[Lp] = float(sum(v for l, v in terms.items() if -Lp <= l <= Lp))
    return DyadicSumReport(levels, [terms[l] for l in levels], partial, partial[L])
