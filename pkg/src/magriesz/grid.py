"""Lattice geometry, cubes, and the gauge-covariant difference operator.

Fields are plain numpy arrays of shape ``grid.shape`` (complex for
functions, real and nonnegative for weights). The magnetic potential is
stored as edge phases ``theta`` of shape ``(n,) + grid.shape``;
``theta[j][x]`` is the line integral of ``a_j`` along the edge from ``x`` to
``x + h e_j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

BOUNDARIES = ("dirichlet", "periodic")


@dataclass(frozen=True)
class Grid:
    """Regular lattice with ``N`` nodes per side and spacing ``h``."""

    n: int
    N: int
    h: float
    boundary: str = "dirichlet"
    origin: tuple = field(default=None)

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.n}")
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"need at least 2 points per side, got N={self.N}")
        if not self.h > 0:
            raise ValueError(f"spacing must be positive, got h={self.h}")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"unknown boundary {self.boundary!r}")
        origin = self.origin
        if origin is None:
            origin = (0.0,) * self.n
        elif np.isscalar(origin):
            origin = (float(origin),) * self.n
        origin = tuple(float(o) for o in origin)
        if len(origin) != self.n:
            raise ValueError("origin must have one coordinate per axis")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "h", float(self.h))

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.n

    @property
    def size(self) -> int:
        return self.N**self.n

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    @property
    def side_length(self) -> float:
        return self.N * self.h

    @property
    def cell_volume(self) -> float:
        return self.h**self.n

    def axis(self, j: int) -> np.ndarray:
        return self.origin[j] + self.h * np.arange(self.N)

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``grid.shape + (n,)``."""
        axes = [self.axis(j) for j in range(self.n)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def center(self) -> np.ndarray:
        return np.array(self.origin) + 0.5 * (self.N - 1) * self.h

    def shift(self, u: np.ndarray, j: int) -> np.ndarray:
        """Return ``u(x + h e_j)``; zero outside the grid unless periodic."""
        if self.periodic:
            return np.roll(u, -1, axis=j)
        out = np.zeros_like(u)
        src = [slice(None)] * self.n
        dst = [slice(None)] * self.n
        src[j] = slice(1, None)
        dst[j] = slice(0, -1)
        out[tuple(dst)] = u[tuple(src)]
        return out

    def shift_back(self, u: np.ndarray, j: int) -> np.ndarray:
        """Return ``u(x - h e_j)``; zero outside the grid unless periodic."""
        if self.periodic:
            return np.roll(u, 1, axis=j)
        out = np.zeros_like(u)
        src = [slice(None)] * self.n
        dst = [slice(None)] * self.n
        src[j] = slice(0, -1)
        dst[j] = slice(1, None)
        out[tuple(dst)] = u[tuple(src)]
        return out

    def check_field(self, u: np.ndarray, name: str = "field") -> np.ndarray:
        u = np.asarray(u)
        if u.shape != self.shape:
            raise ValueError(f"{name} has shape {u.shape}, grid expects {self.shape}")
        if not np.all(np.isfinite(u)):
            raise ValueError(f"{name} has non-finite entries")
        return u

    def check_phases(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n,) + self.shape:
            raise ValueError(
                f"edge phases have shape {theta.shape}, expected {(self.n,) + self.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("edge phases have non-finite entries")
        return theta

    def to_dict(self) -> dict:
        return {"n": self.n, "N": self.N, "h": self.h,
                "boundary": self.boundary, "origin": list(self.origin)}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        return cls(d["n"], d["N"], d["h"], d["boundary"], tuple(d["origin"]))


def make_grid(n: int, N: int, h: float, boundary: str = "dirichlet",
              origin=None) -> Grid:
    return Grid(n, N, h, boundary, origin)


def zero_phases(grid: Grid) -> np.ndarray:
    return np.zeros((grid.n,) + grid.shape)


# ---------------------------------------------------------------------------
# cubes

@dataclass(frozen=True)
class Cube:
    """Axis-aligned block of ``size**n`` nodes starting at ``corner``.

    Geometrically each node owns the cell of side ``h`` centred on it, so the
    cube has side ``R = size * h`` and is centred on the mean of its nodes.
    Dilations ``lam * Q`` keep the centre and contain the nodes strictly
    inside the dilated cube: ``|i - c| < lam * size / 2`` in index units.
    """

    grid: Grid
    corner: tuple
    size: int
    level: int | None = None

    @property
    def R(self) -> float:
        return self.size * self.grid.h

    @property
    def volume(self) -> float:
        return self.R**self.grid.n

    @property
    def center_index(self) -> np.ndarray:
        return np.array(self.corner, dtype=float) + 0.5 * (self.size - 1)

    @property
    def center(self) -> np.ndarray:
        return np.array(self.grid.origin) + self.grid.h * self.center_index

    @property
    def slices(self) -> tuple:
        return tuple(slice(c, c + self.size) for c in self.corner)

    def bounds(self, lam: float = 1.0, clip: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Index bounds ``[lo, hi)`` of the nodes of ``lam * Q``."""
        c = self.center_index
        half = 0.5 * lam * self.size
        lo = np.floor(c - half).astype(int) + 1
        hi = np.ceil(c + half).astype(int)
        if clip:
            lo = np.maximum(lo, 0)
            hi = np.minimum(hi, self.grid.N)
        return lo, hi

    def dilated_slices(self, lam: float) -> tuple:
        lo, hi = self.bounds(lam)
        return tuple(slice(a, b) for a, b in zip(lo, hi))

    def dilate_mask(self, lam: float) -> np.ndarray:
        mask = np.zeros(self.grid.shape, dtype=bool)
        mask[self.dilated_slices(lam)] = True
        return mask

    def leaves_grid(self, lam: float) -> bool:
        lo, hi = self.bounds(lam, clip=False)
        return bool(np.any(lo < 0) or np.any(hi > self.grid.N))

    def contains_index(self, idx) -> bool:
        idx = np.asarray(idx)
        c = np.asarray(self.corner)
        return bool(np.all(idx >= c) and np.all(idx < c + self.size))

    def dilate(self, lam: float) -> "Cube":
        """Co-centred cube of side ``lam * R`` (rounded to whole nodes), clipped."""
        size = max(1, int(round(lam * self.size)))
        c = self.center_index
        corner = np.round(c - 0.5 * (size - 1)).astype(int)
        corner = np.clip(corner, 0, max(self.grid.N - size, 0))
        size = min(size, self.grid.N)
        return Cube(self.grid, tuple(int(v) for v in corner), size)

    def key(self) -> tuple:
        return (self.level, tuple(self.corner), self.size)


def centered_cube(grid: Grid, center_index: Sequence[int], size: int) -> Cube:
    """Cube of ``size`` nodes per side around an index (left-biased when even)."""
    corner = tuple(int(c) - (size - 1) // 2 for c in center_index)
    cube = Cube(grid, corner, size)
    if any(c < 0 or c + size > grid.N for c in corner):
        raise ValueError(f"cube of size {size} at {tuple(center_index)} leaves the grid")
    return cube


@dataclass
class CubeFamily:
    grid: Grid
    cubes: list
    level: int | None
    dropped_nodes: int = 0
    dropped_cubes: int = 0

    def __iter__(self) -> Iterator[Cube]:
        return iter(self.cubes)

    def __len__(self) -> int:
        return len(self.cubes)


def dyadic_cubes(grid: Grid, level: int) -> CubeFamily:
    """Disjoint lattice cubes of ``2**level`` nodes per side.

    Trailing partial cubes at the high end of each axis are dropped and
    counted in the family metadata.
    """
    if level < 0:
        raise ValueError("level must be nonnegative")
    size = 2**level
    if size > grid.N:
        raise ValueError(f"cubes of {size} nodes exceed the {grid.N}-node domain")
    per_axis = grid.N // size
    cubes = [Cube(grid, tuple(int(size * i) for i in idx), size, level)
             for idx in np.ndindex(*(per_axis,) * grid.n)]
    covered = (per_axis * size) ** grid.n
    full = (grid.N // size + (grid.N % size > 0)) ** grid.n
    return CubeFamily(grid, cubes, level, dropped_nodes=grid.size - covered,
                      dropped_cubes=full - per_axis**grid.n)


def cube_families(grid: Grid, levels: Sequence[int]) -> list[CubeFamily]:
    return [dyadic_cubes(grid, lv) for lv in levels]


def cube_average(values: np.ndarray, cube: Cube, s: float = 1.0, lam: float = 1.0) -> float:
    """Node average of ``|values|**s`` over ``lam * Q`` (clipped to the grid)."""
    if not s > 0:
        raise ValueError("exponent must be positive")
    block = np.asarray(values)[cube.dilated_slices(lam)]
    if block.size == 0:
        raise ValueError("cube does not meet the grid")
    a = np.abs(block)
    return float(np.mean(a if s == 1 else a**s))


def cube_sup(values: np.ndarray, cube: Cube, lam: float = 1.0) -> float:
    block = np.asarray(values)[cube.dilated_slices(lam)]
    if block.size == 0:
        raise ValueError("cube does not meet the grid")
    return float(np.max(np.abs(block)))


# ---------------------------------------------------------------------------
# covariant differences

def covariant_derivative(u: np.ndarray, theta: np.ndarray, grid: Grid, j: int) -> np.ndarray:
    """Forward covariant difference ``(e^{-i theta_j} u(x+h e_j) - u(x)) / (i h)``.

    Dirichlet grids extend ``u`` by zero, so the last node along ``j`` sees a
    zero neighbour.
    """
    u = grid.check_field(u, "u")
    theta = grid.check_phases(theta)
    if not 0 <= j < grid.n:
        raise ValueError(f"direction {j} out of range")
    nxt = grid.shift(u.astype(complex), j)
    return (np.exp(-1j * theta[j]) * nxt - u) / (1j * grid.h)


def covariant_gradient(u: np.ndarray, theta: np.ndarray, grid: Grid) -> np.ndarray:
    """All forward covariant differences, shape ``(n,) + grid.shape``."""
    return np.stack([covariant_derivative(u, theta, grid, j) for j in range(grid.n)])


def backward_covariant_derivative(u: np.ndarray, theta: np.ndarray, grid: Grid, j: int) -> np.ndarray:
    """Covariant difference on the edge ending at ``x``: ``(u(x) - e^{i theta_j(x-e_j)} u(x-e_j)) / (i h)``."""
    prev = grid.shift_back(u.astype(complex), j)
    phase = grid.shift_back(np.exp(1j * theta[j]), j)
    return (u - phase * prev) / (1j * grid.h)


def gradient_modulus(u: np.ndarray, theta: np.ndarray, grid: Grid) -> np.ndarray:
    """Node field ``|Lu|`` built from the forward differences."""
    D = covariant_gradient(u, theta, grid)
    return np.sqrt(np.sum(np.abs(D) ** 2, axis=0))


def gauge_transform(u: np.ndarray, theta: np.ndarray, phi: np.ndarray, grid: Grid):
    """Apply ``u -> e^{i phi} u`` and ``theta_j -> theta_j + phi(x+e_j) - phi(x)``."""
    new_theta = np.empty_like(theta, dtype=float)
    for j in range(grid.n):
        new_theta[j] = theta[j] + grid_shift_phi(phi, grid, j) - phi
    return np.exp(1j * phi) * u, new_theta


def grid_shift_phi(phi: np.ndarray, grid: Grid, j: int) -> np.ndarray:
    # for Dirichlet the value past the edge is irrelevant; reuse phi(x)
    if grid.periodic:
        return np.roll(phi, -1, axis=j)
    out = phi.copy()
    src = [slice(None)] * grid.n
    dst = [slice(None)] * grid.n
    src[j] = slice(1, None)
    dst[j] = slice(0, -1)
    out[tuple(dst)] = phi[tuple(src)]
    return out


def diamagnetic_violations(u: np.ndarray, theta: np.ndarray, grid: Grid, tol: float = 0.0) -> int:
    """Count node/direction pairs with ``||u(x+e)| - |u(x)|| > |e^{-i theta}u(x+e) - u(x)|``."""
    count = 0
    for j in range(grid.n):
        nxt = grid.shift(u.astype(complex), j)
        lhs = np.abs(np.abs(nxt) - np.abs(u))
        rhs = np.abs(np.exp(-1j * theta[j]) * nxt - u)
        count += int(np.sum(lhs > rhs * (1 + 4 * np.finfo(float).eps) + tol))
    return count


def wrap_angle(x):
    return (np.asarray(x) + np.pi) % (2 * np.pi) - np.pi


def plaquette_flux(theta: np.ndarray, grid: Grid, j: int, k: int) -> np.ndarray:
    """Circulation of the phases around the (j, k) plaquette at each lower corner.

    Equals ``h**2 * (d_j a_k - d_k a_j)`` to leading order. Dirichlet grids
    return only plaquettes inside the grid (length ``N - 1`` along j and k).
    """
    circ = theta[j] + grid_shift_phi(theta[k], grid, j) - grid_shift_phi(theta[j], grid, k) - theta[k]
    circ = wrap_angle(circ)
    if grid.periodic:
        return circ
    sl = [slice(None)] * grid.n
    sl[j] = slice(0, -1)
    sl[k] = slice(0, -1)
    return circ[tuple(sl)]


def physical_cube_corners(cube: Cube) -> np.ndarray:
    """The 2**n vertices of the geometric cube."""
    c = cube.center
    half = 0.5 * cube.R
    signs = np.array(list(np.ndindex(*(2,) * cube.grid.n))) * 2 - 1
    return c + half * signs


def sobolev_conjugate(q: float, n: int) -> float:
    """``nq/(n-q)`` for ``q < n``; infinite otherwise."""
    return n * q / (n - q) if q < n else math.inf
