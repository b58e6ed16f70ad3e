"""Analytic potentials, magnetic fields and their lattice phases.

A magnetic field is stored as the antisymmetric matrix
``F[j, k] = d_j a_k - d_k a_j``, so that the circulation of the edge phases
around a (j, k) plaquette is ``h**2 * F[j, k]`` to leading order.  In 2D the
scalar field ``b = F[0, 1]`` is the usual curl of ``a``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grid import Grid, wrap_angle

_GL3_NODES, _GL3_WEIGHTS = np.polynomial.legendre.leggauss(3)


@dataclass(frozen=True)
class Potential:
    """Scalar weight ``V(x)`` with an optional analytic gradient."""

    name: str
    func: Callable
    grad: Callable | None = None
    params: dict | None = None

    def __call__(self, x):
        return self.func(np.asarray(x, dtype=float))

    def sample(self, grid: Grid) -> np.ndarray:
        return np.asarray(self(grid.coords()), dtype=float)

    def gradient(self, x):
        if self.grad is None:
            raise ValueError(f"potential {self.name!r} has no analytic gradient")
        return self.grad(np.asarray(x, dtype=float))


def constant_potential(c: float = 1.0) -> Potential:
    return Potential(f"const({c:g})", lambda x: np.full(x.shape[:-1], float(c)),
                     lambda x: np.zeros(x.shape), {"c": c})


def bracket_potential(gamma: float, scale: float = 1.0) -> Potential:
    """``scale * (1 + |x|^2)^(gamma/2)``."""
    def f(x):
        return scale * (1.0 + np.sum(x**2, axis=-1)) ** (gamma / 2)

    def g(x):
        r2 = np.sum(x**2, axis=-1)
        return (scale * gamma * (1.0 + r2) ** (gamma / 2 - 1))[..., None] * x

    return Potential(f"bracket({gamma:g})", f, g, {"gamma": gamma, "scale": scale})


def power_potential(gamma: float, eps: float = 0.05, scale: float = 1.0) -> Potential:
    """``scale * (|x|^2 + eps^2)^(gamma/2)``, a regularised ``|x|^gamma``."""
    if eps <= 0:
        raise ValueError("regularisation must be positive")

    def f(x):
        return scale * (np.sum(x**2, axis=-1) + eps**2) ** (gamma / 2)

    def g(x):
        r2 = np.sum(x**2, axis=-1) + eps**2
        return (scale * gamma * r2 ** (gamma / 2 - 1))[..., None] * x

    return Potential(f"power({gamma:g})", f, g, {"gamma": gamma, "eps": eps, "scale": scale})


def default_potentials() -> list[Potential]:
    """Bracket weights for gamma in {0,1,2,4} and power weights for gamma in {-1,1,2}."""
    return ([bracket_potential(g) for g in (0, 1, 2, 4)]
            + [power_potential(g) for g in (-1, 1, 2)])


def potential_from_name(name: str, **kw) -> Potential:
    if name in ("const", "constant"):
        return constant_potential(kw.get("c", 1.0))
    if name == "bracket":
        return bracket_potential(kw.get("gamma", 2.0), kw.get("scale", 1.0))
    if name == "power":
        return power_potential(kw.get("gamma", 2.0), kw.get("eps", 0.05), kw.get("scale", 1.0))
    raise ValueError(f"unknown potential family {name!r}")


# ---------------------------------------------------------------------------
# magnetic fields

def _pairs(n):
    return [(j, k) for j in range(n) for k in range(j + 1, n)]


@dataclass(frozen=True)
class MagneticField:
    """Closed 2-form given by a function returning ``F[..., j, k]``.

    ``grad`` returns ``d_l F[j, k]`` with shape ``(..., n, n, n)`` (last
    index l). ``potential`` optionally returns a vector potential; when
    absent the radial gauge about ``center`` is used.
    """

    n: int
    field: Callable
    grad: Callable | None = None
    potential: Callable | None = None
    center: tuple | None = None
    name: str = "field"

    def __call__(self, x) -> np.ndarray:
        return self.field(np.asarray(x, dtype=float))

    def sample(self, grid: Grid) -> np.ndarray:
        """``F`` on the nodes, shape ``(n, n) + grid.shape``."""
        F = self(grid.coords())
        return np.moveaxis(F, (-2, -1), (0, 1))

    def scalar(self, x) -> np.ndarray:
        if self.n != 2:
            raise ValueError("scalar field only defined in 2D")
        return self(x)[..., 0, 1]

    def modulus(self, x) -> np.ndarray:
        """``|B| = sum_{j<k} |F[j,k]|``."""
        F = self(x)
        return sum(np.abs(F[..., j, k]) for j, k in _pairs(self.n))

    def grad_modulus(self, x) -> np.ndarray:
        """``|grad B| = sum_{j<k} sum_l |d_l F[j,k]|``."""
        if self.grad is None:
            raise ValueError("field has no analytic gradient")
        G = self.grad(np.asarray(x, dtype=float))
        return sum(np.sum(np.abs(G[..., j, k, :]), axis=-1) for j, k in _pairs(self.n))

    def vector_potential(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.potential is not None:
            return self.potential(x)
        c = np.zeros(self.n) if self.center is None else np.asarray(self.center, float)
        return radial_potential(self.field, x, c)

    def scaled(self, c: float) -> "MagneticField":
        f, g, p = self.field, self.grad, self.potential
        return MagneticField(
            self.n, lambda x: c * f(x),
            None if g is None else (lambda x: c * g(x)),
            None if p is None else (lambda x: c * p(x)),
            self.center, f"{c:g}*{self.name}")


def radial_potential(field: Callable, x: np.ndarray, center, order: int = 12) -> np.ndarray:
    """Radial gauge ``a_k(x) = sum_j int_0^1 t F[j,k](c + t(x-c)) (x-c)_j dt``."""
    t, w = np.polynomial.legendre.leggauss(order)
    t = 0.5 * (t + 1)
    w = 0.5 * w
    d = x - center
    out = np.zeros(x.shape)
    for ti, wi in zip(t, w):
        F = field(center + ti * d)
        out += wi * ti * np.einsum("...jk,...j->...k", F, d)
    return out


def _antisym(b, n):
    b = np.asarray(b, dtype=float)
    F = np.zeros(b.shape + (n, n))
    F[..., 0, 1] = b
    F[..., 1, 0] = -b
    return F


def constant_field(n: int, b: float, plane=(0, 1), center=None) -> MagneticField:
    j, k = plane

    def f(x):
        F = np.zeros(x.shape[:-1] + (n, n))
        F[..., j, k] = b
        F[..., k, j] = -b
        return F

    def g(x):
        return np.zeros(x.shape[:-1] + (n, n, n))

    c = np.zeros(n) if center is None else np.asarray(center, float)

    def a(x):
        d = x - c
        out = np.zeros(x.shape)
        out[..., k] = 0.5 * b * d[..., j]
        out[..., j] = -0.5 * b * d[..., k]
        return out

    return MagneticField(n, f, g, a, tuple(c), f"const({b:g})")


def planar_field(n: int, b: Callable, grad_b: Callable | None = None,
                 center=None, name: str = "planar") -> MagneticField:
    """Field in the (0, 1) plane whose strength depends on ``x_0, x_1`` only.

    Such a field is closed in any dimension. ``grad_b`` returns the gradient
    of the scalar strength with shape ``(..., n)``.
    """
    def f(x):
        F = np.zeros(x.shape[:-1] + (n, n))
        v = b(x)
        F[..., 0, 1] = v
        F[..., 1, 0] = -v
        return F

    def g(x):
        G = np.zeros(x.shape[:-1] + (n, n, n))
        d = grad_b(x)
        G[..., 0, 1, :] = d
        G[..., 1, 0, :] = -d
        return G

    c = tuple(np.zeros(n)) if center is None else tuple(center)
    return MagneticField(n, f, None if grad_b is None else g, None, c, name)


def field_from_potential(V: Potential, c: float, n: int = 2) -> MagneticField:
    """Planar field with strength ``c * V``; ``V`` must depend on (x_0, x_1) in 3D."""
    return planar_field(n, lambda x: c * V(x),
                        None if V.grad is None else (lambda x: c * V.gradient(x)),
                        name=f"{c:g}*{V.name}")


def polynomial_field(coeffs, n: int = 2, center=None) -> MagneticField:
    """Planar field ``b = c0 + c1 x_0 + c2 x_1 + c3 x_0^2 + c4 x_0 x_1 + c5 x_1^2``."""
    c = np.zeros(6)
    c[: len(coeffs)] = coeffs

    def b(x):
        x0, x1 = x[..., 0], x[..., 1]
        return c[0] + c[1] * x0 + c[2] * x1 + c[3] * x0**2 + c[4] * x0 * x1 + c[5] * x1**2

    def gb(x):
        x0, x1 = x[..., 0], x[..., 1]
        out = np.zeros(x.shape)
        out[..., 0] = c[1] + 2 * c[3] * x0 + c[4] * x1
        out[..., 1] = c[2] + c[4] * x0 + 2 * c[5] * x1
        return out

    return planar_field(n, b, gb, center, "poly")


# ---------------------------------------------------------------------------
# lattice phases

def phases_from_potential(grid: Grid, a: Callable) -> np.ndarray:
    """Edge phases by 3-point Gauss quadrature of ``a_j`` along each edge."""
    X = grid.coords()
    theta = np.zeros((grid.n,) + grid.shape)
    for j in range(grid.n):
        acc = np.zeros(grid.shape)
        for s, w in zip(_GL3_NODES, _GL3_WEIGHTS):
            P = X.copy()
            P[..., j] += 0.5 * grid.h * (1 + s)
            acc += 0.5 * w * a(P)[..., j]
        theta[j] = grid.h * acc
    return theta


def phases_from_field(grid: Grid, B: MagneticField) -> np.ndarray:
    """Phases of the field's vector potential; Dirichlet grids only."""
    if grid.periodic:
        raise ValueError("use landau_phases for periodic grids")
    return phases_from_potential(grid, B.vector_potential)


def flux_accumulation_phases(grid: Grid, b: Callable, order: int = 3) -> np.ndarray:
    """2D phases whose plaquette circulations equal the cell integrals of ``b``.

    ``theta_0 = 0`` and ``theta_1`` sums the plaquette fluxes along x_0,
    measured from the middle column. Works for any scalar ``b``, including
    fields without a closed-form potential.
    """
    if grid.n != 2 or grid.periodic:
        raise ValueError("flux accumulation needs a 2D Dirichlet grid")
    t, w = np.polynomial.legendre.leggauss(order)
    t = 0.5 * (t + 1)
    w = 0.5 * w
    X = grid.coords()[:-1, :-1]
    flux = np.zeros((grid.N - 1, grid.N - 1))
    for ti, wi in zip(t, w):
        for tj, wj in zip(t, w):
            P = X + grid.h * np.array([ti, tj])
            flux += wi * wj * b(P)
    flux *= grid.h**2
    theta = np.zeros((2,) + grid.shape)
    cum = np.zeros((grid.N, grid.N - 1))
    cum[1:] = np.cumsum(flux, axis=0)
    mid = grid.N // 2
    cum -= cum[mid]
    theta[1, :, :-1] = cum
    return theta


def landau_phases(grid: Grid, flux: float, axis: int = 0, plane=(0, 1)) -> np.ndarray:
    """Uniform ``flux`` per plaquette on a periodic grid.

    ``axis=0`` puts the linear phase on the edges along ``plane[1]``,
    ``axis=1`` on those along ``plane[0]``. The total flux ``flux * N**2``
    must be a multiple of 2 pi so that the wraparound plaquettes close.
    """
    if not grid.periodic:
        raise ValueError("Landau phases are built for periodic grids")
    N = grid.N
    q = flux * N * N / (2 * np.pi)
    if abs(q - round(q)) > 1e-9:
        raise ValueError("total flux must be a multiple of 2*pi on a torus")
    j, k = plane
    theta = np.zeros((grid.n,) + grid.shape)
    idx = np.indices(grid.shape)
    if axis == 0:
        theta[k] = flux * idx[j]
        last = idx[j] == N - 1
        theta[j][last] = -flux * N * idx[k][last]
    else:
        theta[j] = -flux * idx[k]
        last = idx[k] == N - 1
        theta[k][last] = flux * N * idx[j][last]
    return wrap_angle(theta)


def symmetric_phases_periodic(grid: Grid, flux: float, plane=(0, 1)) -> np.ndarray:
    """Symmetric-gauge phases on a torus (gauge transform of the Landau phases)."""
    from .grid import gauge_transform
    j, k = plane
    theta = landau_phases(grid, flux, 0, plane)
    idx = np.indices(grid.shape)
    chi = -0.5 * flux * idx[j] * idx[k]
    _, theta = gauge_transform(np.zeros(grid.shape), theta, chi, grid)
    return wrap_angle(theta)


def symmetric_phases(grid: Grid, b: float, center=None) -> np.ndarray:
    """Exact phases of the symmetric gauge for a constant 2D field."""
    c = grid.center() if center is None else np.asarray(center, float)
    return phases_from_potential(grid, constant_field(grid.n, b, center=c).potential)


def random_phases(grid: Grid, rng: np.random.Generator, scale: float = np.pi) -> np.ndarray:
    """Independent uniform phases in ``[-scale, scale)`` on every edge."""
    return rng.uniform(-scale, scale, size=(grid.n,) + grid.shape)
