"""Maximal function, Whitney cubes, partition of unity and the magnetic Calderon-Zygmund split.

The level set is ``Omega = {M(|Lf|^p + w^{p/2}|f|^p) > alpha^p}``. Its Whitney
cubes are classified by ``R^2 mean_Q w``, and each bad part ``b_k`` lives on ``2Q_k``.
Potential-dominated cubes take ``b_k = f chi_k``. The others subtract a gauged
local mean first.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .gauge import GaugeData, poincare_gauge, recover_phi, tree_gauge
from .grid import Cube, Grid, covariant_gradient, gradient_modulus
from .parallel import pmap

WHITNEY_FACTOR = 2
TILDE_FACTOR = 18


# ---------------------------------------------------------------------------
# maximal function

def maximal_sizes(N: int) -> list[int]:
    """Cube sides used by the maximal function: ``2^k`` and ``3 * 2^k`` up to ``N``."""
    out = set()
    k = 1
    while k <= N:
        out.add(k)
        if 3 * k <= N:
            out.add(3 * k)
        k *= 2
    return sorted(out)


def _prefix(g: np.ndarray) -> np.ndarray:
    P = np.pad(g, [(1, 0)] * g.ndim)
    for ax in range(g.ndim):
        P = np.cumsum(P, axis=ax)
    return P


def box_sums(P: np.ndarray, s: int) -> np.ndarray:
    """Sums of all ``s``-sided boxes, indexed by their lowest corner, from a prefix array."""
    n = P.ndim
    N = P.shape[0] - 1
    m = N - s + 1
    out = np.zeros((m,) * n)
    for signs in np.ndindex(*(2,) * n):
        sl = tuple(slice(s, s + m) if b else slice(0, m) for b in signs)
        out += (-1) ** (n - sum(signs)) * P[sl]
    return out


def _cover_max(B: np.ndarray, s: int) -> np.ndarray:
    # max over the corners c with c <= x <= c + s - 1, one axis at a time
    out = B
    for ax in range(B.ndim):
        pad = [(0, 0)] * B.ndim
        pad[ax] = (s - 1, s - 1)
        padded = np.pad(out, pad, constant_values=-np.inf)
        out = sliding_window_view(padded, s, axis=ax).max(axis=-1)
    return out


def maximal_function(g: np.ndarray, sizes: Sequence[int] | None = None) -> np.ndarray:
    """Uncentred maximal function over lattice cubes containing each node.

    Every cube side in ``sizes`` (default :func:`maximal_sizes`) is tried at
    every position inside the grid.
    """
    g = np.asarray(g, dtype=float)
    if g.ndim < 1 or len(set(g.shape)) != 1:
        raise ValueError("maximal_function expects a field on a cubic grid")
    if not np.all(np.isfinite(g)) or np.any(g < 0):
        raise ValueError("maximal_function needs a finite nonnegative field")
    N = g.shape[0]
    if sizes is None:
        sizes = maximal_sizes(N)
    P = _prefix(g)
    out = g.copy()
    for s in sizes:
        if not 1 <= s <= N:
            raise ValueError(f"cube side {s} does not fit in {N} nodes")
        means = box_sums(P, s) / s**g.ndim
        np.maximum(out, _cover_max(means, s), out=out)
    return out


def maximal_function_bruteforce(g: np.ndarray, sizes: Sequence[int] | None = None) -> np.ndarray:
    """Direct loop over every cube; for testing on small grids."""
    g = np.asarray(g, dtype=float)
    N, n = g.shape[0], g.ndim
    sizes = maximal_sizes(N) if sizes is None else sizes
    out = g.copy()
    for s in sizes:
        for c in np.ndindex(*(N - s + 1,) * n):
            sl = tuple(slice(a, a + s) for a in c)
            out[sl] = np.maximum(out[sl], g[sl].mean())
    return out


# ---------------------------------------------------------------------------
# Whitney cubes

@dataclass
class WhitneyCubes:
    cubes: list
    report: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.cubes)

    def __iter__(self):
        return iter(self.cubes)


def _count_box(P: np.ndarray, lo, hi) -> float:
    n = P.ndim
    tot = 0.0
    for signs in np.ndindex(*(2,) * n):
        idx = tuple(h if b else l for b, l, h in zip(signs, lo, hi))
        tot += (-1) ** (n - sum(signs)) * P[idx]
    return tot


def expanded_cube(cube: Cube, lam: float = WHITNEY_FACTOR) -> Cube:
    """``lam * Q`` as a (clipped) node block."""
    lo, hi = cube.bounds(lam)
    sizes = set(int(v) for v in hi - lo)
    if len(sizes) != 1:
        raise ValueError("dilated cube was clipped into a box")
    return Cube(cube.grid, tuple(int(v) for v in lo), sizes.pop(), cube.level)


def whitney(omega: np.ndarray, grid: Grid) -> WhitneyCubes:
    """Maximal dyadic cubes with ``2Q`` inside ``omega`` (and inside the grid).

    Nodes outside the grid count as part of the complement ``F``.
    """
    omega = np.asarray(omega, dtype=bool)
    if omega.shape != grid.shape:
        raise ValueError(f"mask shape {omega.shape} does not match grid {grid.shape}")
    if not omega.any():
        return WhitneyCubes([], verify_whitney([], omega, grid))
    if omega.all():
        raise ValueError("the complement of the level set is empty; no Whitney scale exists")
    PF = _prefix((~omega).astype(float))
    covered = np.zeros(grid.shape, dtype=bool)
    cubes = []
    level = int(np.floor(np.log2(grid.N)))
    for lv in range(level, -1, -1):
        s = 2**lv
        per = grid.N // s
        for idx in np.ndindex(*(per,) * grid.n):
            corner = tuple(s * i for i in idx)
            sl = tuple(slice(c, c + s) for c in corner)
            if covered[sl].any():
                continue
            q = Cube(grid, corner, s, lv)
            if q.leaves_grid(WHITNEY_FACTOR):
                continue
            lo, hi = q.bounds(WHITNEY_FACTOR)
            if _count_box(PF, lo, hi) > 0.5:
                continue
            cubes.append(q)
            covered[sl] = True
    return WhitneyCubes(cubes, verify_whitney(cubes, omega, grid))


def verify_whitney(cubes: Sequence[Cube], omega: np.ndarray, grid: Grid) -> dict:
    """Exhaustive check of disjointness, union, ``2Q`` inside and ``4Q`` touching ``F``."""
    count = np.zeros(grid.shape, dtype=int)
    count2 = np.zeros(grid.shape, dtype=int)
    not_in_omega = 0
    misses_F = 0
    for q in cubes:
        count[q.slices] += 1
        count2[q.dilated_slices(WHITNEY_FACTOR)] += 1
        if q.leaves_grid(WHITNEY_FACTOR) or not omega[q.dilated_slices(WHITNEY_FACTOR)].all():
            not_in_omega += 1
        if not (q.leaves_grid(2 * WHITNEY_FACTOR)
                or (~omega[q.dilated_slices(2 * WHITNEY_FACTOR)]).any()):
            misses_F += 1
    return {
        "cubes": len(cubes),
        "touch_factor": touch_factor(cubes, omega, grid),
        "disjoint": bool(count.max(initial=0) <= 1),
        "union": bool(np.array_equal(count > 0, omega)),
        "expanded_inside": not_in_omega == 0,
        "expanded_violations": not_in_omega,
        "far_from_F": misses_F,
        "overlap_Q": int(count.max(initial=0)),
        "overlap_2Q": int(count2.max(initial=0)),
    }


def touch_factor(cubes: Sequence[Cube], omega: np.ndarray, grid: Grid) -> float:
    """Smallest ``lam`` such that every ``lam' Q_k`` with ``lam' > lam`` meets ``F``.

    Sup-norm index distance from each centre to the nearest complement node
    (the grid exterior included), times ``2 / size``; maximised over cubes.
    Maximal aligned cubes always stay below 5.
    """
    if not cubes:
        return 0.0
    F = np.argwhere(~omega).astype(float)
    worst = 0.0
    for q in cubes:
        c = q.center_index
        d = float(np.min(np.minimum(c + 1, grid.N - c)))
        if len(F):
            d = min(d, float(np.min(np.max(np.abs(F - c), axis=1))))
        worst = max(worst, 2 * d / q.size)
    return worst


# ---------------------------------------------------------------------------
# partition of unity

def bump_profile(t: np.ndarray) -> np.ndarray:
    """C^1 quadratic spline: 1 on ``|t| <= 1``, 0 on ``|t| >= 2``."""
    u = np.clip(np.abs(t) - 1.0, 0.0, 1.0)
    return np.where(u <= 0.5, 1 - 2 * u**2, 2 * (1 - u) ** 2)


def cube_bump(cube: Cube) -> tuple[tuple, np.ndarray]:
    """Product bump on ``2Q``: returns the block slices and values."""
    sl = cube.dilated_slices(WHITNEY_FACTOR)
    c = cube.center_index
    half = 0.5 * cube.size
    val = np.ones(tuple(s.stop - s.start for s in sl))
    for j, s in enumerate(sl):
        t = (np.arange(s.start, s.stop) - c[j]) / half
        shape = [1] * len(sl)
        shape[j] = -1
        val = val * bump_profile(t).reshape(shape)
    return sl, val


@dataclass
class Partition:
    blocks: list                      # (slices, values) per cube
    constant: float
    sum_error: float

    def dense(self, k: int, shape) -> np.ndarray:
        out = np.zeros(shape)
        sl, v = self.blocks[k]
        out[sl] = v
        return out


def partition_of_unity(cubes: Sequence[Cube], grid: Grid, omega: np.ndarray | None = None) -> Partition:
    """Normalised bumps ``chi_k = psi_k / sum_l psi_l`` with ``sum chi_k = 1`` on the union.

    ``constant`` is ``max_k (sup chi_k + R_k sup |grad chi_k|)`` with forward differences.
    """
    cubes = list(cubes)
    if any(q.grid.shape != grid.shape for q in cubes):
        raise ValueError("cubes do not live on this grid")
    if any(q.leaves_grid(WHITNEY_FACTOR) for q in cubes):
        raise ValueError("an expanded cube leaves the grid")
    bumps = [cube_bump(q) for q in cubes]
    total = np.zeros(grid.shape)
    for sl, v in bumps:
        total[sl] += v
    covered = np.zeros(grid.shape, dtype=bool)
    for q in cubes:
        covered[q.slices] = True
    if omega is None:
        omega = covered
    if cubes and np.any(total[omega] <= 0):
        raise ValueError("bump profiles vanish somewhere on the covered set")
    blocks = []
    worst = 0.0
    for q, (sl, v) in zip(cubes, bumps):
        chi = v / total[sl]
        blocks.append((sl, chi))
        full = np.zeros(grid.shape)
        full[sl] = chi
        grad = 0.0
        for j in range(grid.n):
            d = np.abs(np.diff(full, axis=j)) / grid.h
            grad = max(grad, float(d.max(initial=0.0)))
        worst = max(worst, float(chi.max(initial=0.0)) + q.R * grad)
    s = np.zeros(grid.shape)
    for sl, chi in blocks:
        s[sl] += chi
    err = float(np.max(np.abs(s[omega] - 1), initial=0.0)) if cubes else 0.0
    return Partition(blocks, worst, err)


# ---------------------------------------------------------------------------
# decomposition

@dataclass
class CZDecomposition:
    grid: Grid
    f: np.ndarray
    theta: np.ndarray
    omega_w: np.ndarray
    p: float
    alpha: float
    level_set: np.ndarray
    cubes: list
    types: list
    partition: Partition
    gauges: dict                      # k -> GaugeData for type-2 cubes
    means: dict                       # k -> m_{2Q_k}(e^{i phi_k} f)
    bad: list                         # (slices, block) per cube
    g: np.ndarray
    whitney_report: dict = field(default_factory=dict)
    certificate: dict = field(default_factory=dict)

    def bad_dense(self, k: int) -> np.ndarray:
        out = np.zeros(self.grid.shape, dtype=complex)
        sl, v = self.bad[k]
        out[sl] = v
        return out

    def bad_sum(self) -> np.ndarray:
        out = np.zeros(self.grid.shape, dtype=complex)
        for sl, v in self.bad:
            out[sl] += v
        return out

    def cube_table(self) -> list[dict]:
        return [{"k": k, "corner": list(q.corner), "size": q.size, "R": q.R, "type": t}
                for k, (q, t) in enumerate(zip(self.cubes, self.types))]


def _norm(u: np.ndarray, p: float, grid: Grid) -> float:
    a = np.abs(u)
    if np.isinf(p):
        return float(a.max(initial=0.0))
    return float((grid.cell_volume * np.sum(a**p)) ** (1 / p))


def _level_density(f, theta, w, p, grid):
    return gradient_modulus(f, theta, grid) ** p + w ** (p / 2) * np.abs(f) ** p


def _gauge_on(cube: Cube, theta, grid, field_obj) -> GaugeData:
    if field_obj is None:
        return tree_gauge(theta, grid, cube)
    data = poincare_gauge(field_obj, grid, cube)
    recover_phi(theta, data, grid)
    return data


def _gauged_mean(f, data: GaugeData, region: tuple) -> complex:
    # e^{i psi} f with psi = -phi, so the gauged phases are the leftover edges
    q = data.cube
    loc = tuple(slice(r.start - c, r.stop - c) for r, c in zip(region, q.corner))
    return complex(np.mean(np.exp(-1j * data.phi[loc]) * f[region]))


def cz_decompose(f: np.ndarray, theta: np.ndarray, omega_w: np.ndarray, p: float, alpha: float,
                 grid: Grid, field=None, certify: bool = True) -> CZDecomposition:
    """Split ``f = g + sum_k b_k`` at height ``alpha``.

    ``omega_w`` is the weight (the potential, or any A-infinity weight).
    Type-2 cubes are gauged by the radial gauge of ``field`` when it is given,
    otherwise by the lattice tree gauge of ``theta``.
    """
    if not 1 <= p < 2:
        raise ValueError("p must lie in [1, 2)")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    f = grid.check_field(np.asarray(f), "f").astype(complex)
    theta = grid.check_phases(theta)
    w = np.asarray(omega_w, dtype=float)
    if w.shape != grid.shape or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weight must be a finite nonnegative node field")
    dens = _level_density(f, theta, w, p, grid)
    Omega = maximal_function(dens) > alpha**p
    wc = whitney(Omega, grid)
    cubes = wc.cubes
    part = partition_of_unity(cubes, grid, Omega)
    types = [1 if q.R**2 * float(np.mean(w[q.slices])) > 1 else 2 for q in cubes]

    def work(k):
        q = cubes[k]
        sl, chi = part.blocks[k]
        if types[k] == 1:
            return k, None, None, (sl, f[sl] * chi)
        data = _gauge_on(expanded_cube(q), theta, grid, field)
        m = _gauged_mean(f, data, sl)
        return k, data, m, (sl, (f[sl] - np.exp(1j * data.phi) * m) * chi)

    results = pmap(work, range(len(cubes)))
    gauges, means, bad = {}, {}, [None] * len(cubes)
    for k, data, m, blk in results:
        bad[k] = blk
        if data is not None:
            gauges[k], means[k] = data, m
    S = np.zeros(grid.shape, dtype=complex)
    for sl, v in bad:
        S[sl] += v
    g = f - S
    dec = CZDecomposition(grid, f, theta, w, p, alpha, Omega, cubes, types, part,
                          gauges, means, bad, g, wc.report)
    dec._field = field
    if certify:
        dec.certificate = cz_verify(dec, strict=False)
    return dec


def _mean_offsets(dec: CZDecomposition) -> tuple[float, int, int]:
    """Largest ``|m_{2Q_k}(gauged f) - m_{Qtilde_m}(gauged f)| / (Rtilde_m alpha)`` over neighbours."""
    grid = dec.grid
    two = [i for i, t in enumerate(dec.types) if t == 2]
    if not two:
        return 0.0, 0, 0
    masks = {k: dec.cubes[k].bounds(WHITNEY_FACTOR) for k in two}

    def meets(a, b):
        (la, ha), (lb, hb) = masks[a], masks[b]
        return bool(np.all(la < hb) and np.all(lb < ha))

    def one(m):
        qt = dec.cubes[m].dilate(TILDE_FACTOR)
        nbrs = [k for k in two if meets(k, m)]
        data = _gauge_on(qt, dec.theta, grid, getattr(dec, "_field", None))
        whole = _gauged_mean(dec.f, data, qt.slices)
        worst, outside = 0.0, 0
        lo_t = np.array(qt.corner)
        for k in nbrs:
            lo, hi = masks[k]
            if np.any(lo < lo_t) or np.any(hi > lo_t + qt.size):
                outside += 1
                continue
            region = tuple(slice(a, b) for a, b in zip(lo, hi))
            diff = abs(_gauged_mean(dec.f, data, region) - whole)
            worst = max(worst, diff / (qt.R * dec.alpha))
        return worst, len(nbrs), outside

    res = pmap(one, two)
    return (max(r[0] for r in res), sum(r[1] for r in res), sum(r[2] for r in res))


def cz_verify(dec: CZDecomposition, strict: bool = True) -> dict:
    """Recompute the identities and empirical constants of a decomposition.

    Exact identities (reconstruction, supports, partition sum, good part on
    the complement, type rule) are collected in ``failures``; with ``strict``
    any failure raises ``ValueError``.
    """
    grid, f, p, alpha = dec.grid, dec.f, dec.p, dec.alpha
    w = dec.omega_w
    vol = grid.cell_volume
    failures = []

    S = np.zeros(grid.shape, dtype=complex)
    for sl, v in dec.bad:
        S[sl] += v
    # g was formed as f - S in the same order, so g + S reproduces f up to one rounding
    rec = float(np.max(np.abs(f - (dec.g + S)), initial=0.0))
    scale = max(1.0, float(np.max(np.abs(f), initial=0.0)), float(np.max(np.abs(S), initial=0.0)))
    if rec > 4 * np.finfo(float).eps * scale:
        failures.append(f"reconstruction error {rec:.3e}")

    for k, (q, (sl, v)) in enumerate(zip(dec.cubes, dec.bad)):
        if sl != q.dilated_slices(WHITNEY_FACTOR):
            failures.append(f"b_{k} block is not the expanded cube")
    chi_sum = np.zeros(grid.shape)
    for q, (sl, chi) in zip(dec.cubes, dec.partition.blocks):
        if sl != q.dilated_slices(WHITNEY_FACTOR):
            failures.append("partition block is not the expanded cube")
        if np.any(chi < -1e-15) or np.any(chi > 1 + 1e-12):
            failures.append("partition values outside [0, 1]")
        chi_sum[sl] += chi
    Om = dec.level_set
    if dec.cubes:
        err = float(np.max(np.abs(chi_sum[Om] - 1)))
        if err > 1e-12:
            failures.append(f"partition sum off by {err:.3e}")
        if np.any(chi_sum[~Om] != 0):
            failures.append("partition leaks into the complement")
    if np.any(S[~Om] != 0) or np.any(dec.g[~Om] != f[~Om]):
        failures.append("good part differs from f on the complement")
    dens = _level_density(f, dec.theta, w, p, grid)
    if np.any(dens[~Om] > alpha**p * (1 + 1e-12)):
        failures.append("density exceeds alpha^p on the complement")
    for q, t in zip(dec.cubes, dec.types):
        expect = 1 if q.R**2 * float(np.mean(w[q.slices])) > 1 else 2
        if t != expect:
            failures.append(f"cube {q.corner} carries type {t}, expected {expect}")
    wr = verify_whitney(dec.cubes, Om, grid)
    if not (wr["disjoint"] and wr["union"] and wr["expanded_inside"]):
        failures.append("Whitney structure broken")

    # empirical constants
    Lg = gradient_modulus(dec.g, dec.theta, grid)
    sw = np.sqrt(w)
    Lf_p = _norm(gradient_modulus(f, dec.theta, grid), p, grid)
    wf_p = _norm(sw * f, p, grid)
    total = vol * float(np.sum(dens))
    good_l2 = _norm(Lg, 2, grid) + _norm(sw * dec.g, 2, grid)
    rhs = alpha ** (1 - p / 2) * (Lf_p + wf_p) ** (p / 2)
    per_cube = 0.0
    for k, q in enumerate(dec.cubes):
        b = np.zeros(grid.shape, dtype=complex)
        sl, v = dec.bad[k]
        b[sl] = v
        Lb = np.sqrt(np.sum(np.abs(covariant_gradient(b, dec.theta, grid)) ** 2, axis=0))
        val = vol * float(np.sum(Lb**p + q.R ** (-p) * np.abs(b) ** p))
        per_cube = max(per_cube, val / (alpha**p * q.volume))
    measure = sum(q.volume for q in dec.cubes)
    offset, pairs, outside = _mean_offsets(dec)
    constants = {
        "good_L2": good_l2 / rhs if rhs > 0 else 0.0,
        "bad_local": per_cube,
        "measure": measure / (total / alpha**p) if total > 0 else 0.0,
        "overlap": wr["overlap_Q"],
        "overlap_2Q": wr["overlap_2Q"],
        "good_sup": float(Lg.max(initial=0.0)) / alpha,
        "mean_offset": offset,
        "partition": dec.partition.constant,
    }
    cert = {
        "alpha": alpha, "p": p,
        "cubes": len(dec.cubes),
        "type1": sum(1 for t in dec.types if t == 1),
        "type2": sum(1 for t in dec.types if t == 2),
        "reconstruction_error": rec,
        "constants": constants,
        "neighbour_pairs": pairs,
        "neighbours_outside_tilde": outside,
        "whitney": wr,
        "failures": failures,
        "passes": not failures,
    }
    if strict and failures:
        raise ValueError("decomposition check failed: " + "; ".join(failures))
    return cert


def alpha_stability(f, theta, omega_w, p, alphas, grid, field=None,
                    keys=("bad_local", "measure", "overlap", "good_sup")) -> dict:
    """Max/min of each certificate constant over a sweep of heights.

    Heights whose level set is empty give no constants and are skipped.
    """
    rows = []
    for a in alphas:
        dec = cz_decompose(f, theta, omega_w, p, a, grid, field=field)
        if dec.cubes:
            rows.append(dec.certificate)
    spread = {}
    for key in keys:
        vals = np.array([r["constants"][key] for r in rows], dtype=float)
        if len(vals) == 0:
            spread[key] = float("nan")
        elif np.all(vals > 0) and np.all(np.isfinite(vals)):
            spread[key] = float(vals.max() / vals.min())
        else:
            spread[key] = float("inf")
    return {"alphas": list(map(float, alphas)), "used": len(rows), "spread": spread,
            "certificates": rows,
            "exact": all(r["passes"] for r in rows)}
