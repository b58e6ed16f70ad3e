"""Bounded gauges on a cube: radial construction, phase recovery and mollification."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .grid import Cube, Grid, physical_cube_corners, wrap_angle

_GL3_NODES, _GL3_WEIGHTS = np.polynomial.legendre.leggauss(3)


@dataclass
class GaugeData:
    cube: Cube
    h: np.ndarray                      # (n,) + cube shape, node values
    edges: np.ndarray                  # (n,) + cube shape, edge line integrals of h
    phi: np.ndarray | None = None
    mismatch: float | None = None
    residual: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        c = self.cube
        return {"cube": {"corner": list(c.corner), "size": c.size, "R": c.R},
                "residual": self.residual, "bounds": self.bounds,
                "mismatch": self.mismatch}


def _field_callable(B, grid: Grid) -> Callable:
    """Callable ``x -> F[..., j, k]`` from a field object, callable or node samples."""
    if callable(B):
        return B
    F = np.asarray(B, dtype=float)
    n = grid.n
    if F.shape == grid.shape and n == 2:
        F = np.stack([np.stack([np.zeros_like(F), F]), np.stack([-F, np.zeros_like(F)])])
    if F.shape != (n, n) + grid.shape:
        raise ValueError(f"sampled field must have shape {(n, n) + grid.shape}")
    if np.max(np.abs(F + np.swapaxes(F, 0, 1))) > 1e-12 * max(1.0, np.max(np.abs(F))):
        raise ValueError("field samples are not antisymmetric")
    axes = [grid.axis(j) for j in range(n)]
    interp = RegularGridInterpolator(axes, np.moveaxis(F, (0, 1), (-2, -1)),
                                     bounds_error=False, fill_value=None)
    return lambda x: interp(np.asarray(x))


def _check_antisymmetric(Fc: Callable, pts: np.ndarray):
    F = Fc(pts)
    if np.max(np.abs(F + np.swapaxes(F, -1, -2))) > 1e-12 * max(1.0, np.max(np.abs(F))):
        raise ValueError("field is not antisymmetric")


def radial_gauge_values(Fc: Callable, x: np.ndarray, center: np.ndarray, order: int = 16) -> np.ndarray:
    """``h_k(x) = sum_j int_0^1 t F[j,k](c + t(x-c)) (x-c)_j dt`` by Gauss-Legendre in t."""
    t, w = np.polynomial.legendre.leggauss(order)
    t = 0.5 * (t + 1)
    w = 0.5 * w
    d = x - center
    out = np.zeros(x.shape)
    for ti, wi in zip(t, w):
        out += wi * ti * np.einsum("...jk,...j->...k", Fc(center + ti * d), d)
    return out


def edge_integrals(hfun: Callable, X: np.ndarray, hstep: float) -> np.ndarray:
    """Line integrals of a vector field along the forward edges from nodes ``X``."""
    n = X.shape[-1]
    out = np.zeros((n,) + X.shape[:-1])
    for j in range(n):
        acc = np.zeros(X.shape[:-1])
        for s, w in zip(_GL3_NODES, _GL3_WEIGHTS):
            P = X.copy()
            P[..., j] += 0.5 * hstep * (1 + s)
            acc += 0.5 * w * hfun(P)[..., j]
        out[j] = hstep * acc
    return out


def _cube_nodes(grid: Grid, cube: Cube) -> np.ndarray:
    return grid.coords()[cube.slices]


def plaquette_fluxes(edges: np.ndarray, j: int, k: int) -> np.ndarray:
    """Circulation around the (j, k) plaquettes fully inside a block of edge values."""
    n = edges.shape[0]
    a = [slice(None)] * n
    a[j] = slice(0, -1)
    a[k] = slice(0, -1)
    bj = list(a)
    bj[j] = slice(1, None)
    bk = list(a)
    bk[k] = slice(1, None)
    ej, ek = edges[j], edges[k]
    return ej[tuple(a)] + ek[tuple(bj)] - ej[tuple(bk)] - ek[tuple(a)]


def curl_residual(edges: np.ndarray, Fc: Callable, X: np.ndarray, hstep: float) -> float:
    """``max |plaquette flux / h^2 - F[j,k](plaquette centre)|`` over the block."""
    n = X.shape[-1]
    worst = 0.0
    for j in range(n):
        for k in range(j + 1, n):
            flux = plaquette_fluxes(edges, j, k) / hstep**2
            a = [slice(None)] * n
            a[j] = slice(0, -1)
            a[k] = slice(0, -1)
            mid = X[tuple(a)].copy()
            mid[..., j] += 0.5 * hstep
            mid[..., k] += 0.5 * hstep
            worst = max(worst, float(np.max(np.abs(flux - Fc(mid)[..., j, k]))))
    return worst


def _sup_modulus(Fc, pts, n):
    F = Fc(pts)
    return float(np.max(sum(np.abs(F[..., j, k]) for j in range(n) for k in range(j + 1, n))))


def poincare_gauge(B, grid: Grid, cube: Cube, gradB: Callable | None = None,
                   order: int = 16) -> GaugeData:
    """Radial gauge about the cube centre, with ``curl h = B`` on the cube.

    ``B`` is a field object or callable returning ``F[..., j, k]``, or node
    samples of shape ``(n, n) + grid.shape`` (a scalar array in 2D).
    The certificate stores ``sup|h| / (R sup|B|)`` (at most ``sqrt(n)/2``),
    the plaquette curl residual and ``sup|grad h|`` against
    ``sup|B| + R sup|grad B|``.
    """
    Fc = _field_callable(B, grid)
    c = cube.center
    X = _cube_nodes(grid, cube)
    corners = physical_cube_corners(cube)
    _check_antisymmetric(Fc, X)
    hfun = lambda x: radial_gauge_values(Fc, x, c, order)
    hv = np.moveaxis(hfun(X), -1, 0)
    edges = edge_integrals(hfun, X, grid.h)
    pts = np.concatenate([X.reshape(-1, grid.n), corners])
    sup_h = float(np.max(np.linalg.norm(hfun(pts), axis=-1)))
    sup_B = _sup_modulus(Fc, pts, grid.n)
    bounds = {"sup_h": sup_h, "sup_B": sup_B, "R": cube.R,
              "h_ratio": sup_h / (cube.R * sup_B) if sup_B > 0 else 0.0}
    if cube.size > 1:
        grads = np.gradient(hv, grid.h, axis=tuple(range(1, grid.n + 1)))
        sup_dh = float(np.max(np.sqrt(sum(np.abs(g) ** 2 for g in grads).sum(axis=0))))
        denom = sup_B
        if gradB is not None:
            G = gradB(X)
            denom += cube.R * float(np.max(np.abs(G)))
        bounds["sup_grad_h"] = sup_dh
        bounds["grad_ratio"] = sup_dh / denom if denom > 0 else 0.0
    res = {"curl": curl_residual(edges, Fc, X, grid.h) if cube.size > 1 else 0.0}
    return GaugeData(cube, hv, edges, residual=res, bounds=bounds)


def axial_gauge(b: Callable, grid: Grid, cube: Cube, order: int = 16) -> GaugeData:
    """2D cross-check gauge ``h = (0, int_{c_0}^{x_0} b(s, x_1) ds)``."""
    if grid.n != 2:
        raise ValueError("the axial cross-check is two-dimensional")
    c = cube.center
    t, w = np.polynomial.legendre.leggauss(order)

    def hfun(x):
        out = np.zeros(x.shape)
        half = 0.5 * (x[..., 0] - c[0])
        for ti, wi in zip(t, w):
            P = x.copy()
            P[..., 0] = c[0] + half * (1 + ti)
            out[..., 1] += wi * half * b(P)
        return out

    X = _cube_nodes(grid, cube)
    Fc = lambda x: np.stack([np.stack([np.zeros(x.shape[:-1]), b(x)], -1),
                             np.stack([-b(x), np.zeros(x.shape[:-1])], -1)], -2)
    edges = edge_integrals(hfun, X, grid.h)
    pts = np.concatenate([X.reshape(-1, 2), physical_cube_corners(cube)])
    sup_h = float(np.max(np.linalg.norm(hfun(pts), axis=-1)))
    sup_B = float(np.max(np.abs(b(pts))))
    return GaugeData(cube, np.moveaxis(hfun(X), -1, 0), edges,
                     residual={"curl": curl_residual(edges, Fc, X, grid.h)},
                     bounds={"sup_h": sup_h, "sup_B": sup_B, "R": cube.R,
                             "h_ratio": sup_h / (cube.R * sup_B) if sup_B > 0 else 0.0})


def default_mismatch_tolerance(grid: Grid, sup_B: float) -> float:
    return 10.0 * grid.h**3 * max(1.0, sup_B)


def recover_phi(theta: np.ndarray, gauge: GaugeData, grid: Grid, tol: float | None = None):
    """Phase ``phi`` with ``theta = h-edges + d phi`` on the cube.

    ``phi`` vanishes at the lowest corner and is summed along lattice paths
    that run along axis 0 first, then axis 1 (then axis 2). Returns
    ``(phi, mismatch)`` where the mismatch is the largest plaquette flux of
    ``theta - h-edges``; raises when it exceeds ``tol``.
    """
    cube = gauge.cube
    sl = (slice(None),) + cube.slices
    diff = np.asarray(theta, dtype=float)[sl] - gauge.edges
    n = grid.n
    mismatch = 0.0
    if cube.size > 1:
        for j in range(n):
            for k in range(j + 1, n):
                mismatch = max(mismatch, float(np.max(np.abs(wrap_angle(plaquette_fluxes(diff, j, k))))))
    if tol is None:
        tol = default_mismatch_tolerance(grid, gauge.bounds.get("sup_B", 0.0))
    if mismatch > tol:
        raise ValueError(f"flux mismatch {mismatch:.3e} exceeds tolerance {tol:.3e}: "
                         "the phases and the gauge do not carry the same field")
    s = cube.size
    phi = np.zeros((s,) * n)
    # fill the face where later axes are 0, extending along axis j
    for j in range(n):
        def sel(sj):
            idx = [slice(None)] * j + [sj] + [0] * (n - j - 1)
            return tuple(idx)
        inc = diff[j][sel(slice(0, -1))]
        phi[sel(slice(1, None))] = phi[sel(slice(0, 1))] + np.cumsum(inc, axis=j)
    gauge.phi = phi
    gauge.mismatch = mismatch
    return phi, mismatch


def gauged_edges(gauge: GaugeData) -> np.ndarray:
    """``h-edges + d phi`` on the edges inside the cube (other entries keep the h-edge value)."""
    if gauge.phi is None:
        raise ValueError("recover_phi has not been run")
    phi = gauge.phi
    n = phi.ndim
    out = gauge.edges.copy()
    for j in range(n):
        a = [slice(None)] * n
        b = [slice(None)] * n
        a[j] = slice(0, -1)
        b[j] = slice(1, None)
        out[j][tuple(a)] += phi[tuple(b)] - phi[tuple(a)]
    return out


def mollify(Fc: Callable, radius: float, n: int, order: int = 6) -> Callable:
    """Convolution of a field with a normalised smooth bump of the given radius."""
    t, w = np.polynomial.legendre.leggauss(order)
    Z = np.stack(np.meshgrid(*([t] * n), indexing="ij"), -1).reshape(-1, n) * radius
    W = np.prod(np.stack(np.meshgrid(*([w] * n), indexing="ij"), -1).reshape(-1, n), axis=1)
    r2 = np.sum(Z**2, axis=1) / radius**2
    bump = np.where(r2 < 1, (1 - np.minimum(r2, 1)) ** 3, 0.0)
    W = W * bump
    W = W / W.sum()

    def F(x):
        x = np.asarray(x, dtype=float)
        acc = 0.0
        for z, wt in zip(Z, W):
            if wt == 0:
                continue
            acc = acc + wt * Fc(x - z)
        return acc

    return F


def mollified_gauge(B, grid: Grid, cube: Cube, radius: float, order: int = 16) -> GaugeData:
    """Radial gauge of the mollified field; bounds use the unmollified sup."""
    if radius < grid.h:
        raise ValueError(f"smoothing radius {radius} is below the spacing {grid.h}")
    Fc = _field_callable(B, grid)
    Fm = mollify(Fc, radius, grid.n)
    data = poincare_gauge(Fm, grid, cube, order=order)
    X = _cube_nodes(grid, cube)
    pts = np.concatenate([X.reshape(-1, grid.n), physical_cube_corners(cube)])
    sup_rough = _sup_modulus(Fc, pts, grid.n)
    data.bounds["sup_B_unmollified"] = sup_rough
    data.bounds["h_ratio_unmollified"] = (data.bounds["sup_h"] / (cube.R * sup_rough)
                                          if sup_rough > 0 else 0.0)
    data.bounds["radius"] = radius
    if "sup_grad_h" in data.bounds:
        data.bounds["grad_ratio_unmollified"] = (data.bounds["sup_grad_h"] / sup_rough
                                                 if sup_rough > 0 else 0.0)
    return data


def tree_gauge(theta: np.ndarray, grid: Grid, cube: Cube) -> GaugeData:
    """Lattice axial gauge: ``phi`` absorbs the phases along the axis-ordered paths.

    The leftover edge phases ``theta - d phi`` vanish on the path tree and
    carry the enclosed flux elsewhere, so they are bounded by ``R h sup|B|``.
    """
    zero = np.zeros((grid.n,) + (cube.size,) * grid.n)
    data = GaugeData(cube, zero / grid.h, zero)
    recover_phi(theta, data, grid, tol=np.inf)
    phi = data.phi
    sl = (slice(None),) + cube.slices
    rest = np.asarray(theta, dtype=float)[sl].copy()
    for j in range(grid.n):
        a = [slice(None)] * grid.n
        b = [slice(None)] * grid.n
        a[j] = slice(0, -1)
        b[j] = slice(1, None)
        rest[j][tuple(a)] -= phi[tuple(b)] - phi[tuple(a)]
        last = [slice(None)] * grid.n
        last[j] = -1
        rest[j][tuple(last)] = 0.0      # edges leaving the cube
    data.edges = wrap_angle(rest)
    data.h = data.edges / grid.h
    data.bounds = {"sup_h": float(np.max(np.linalg.norm(data.h, axis=0))), "R": cube.R}
    return data
