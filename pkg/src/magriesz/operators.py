"""Assembly of the lattice magnetic Schrodinger operator and its functional calculus."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import minimize_scalar

from .grid import Grid, zero_phases

DEFAULT_CAP = 4096

SYMBOLS = ("sqrt", "inv_sqrt", "inv", "imag_power", "heat")


def _flat(grid: Grid) -> np.ndarray:
    return np.arange(grid.size).reshape(grid.shape)


def node_derivative_matrix(grid: Grid, theta: np.ndarray, j: int) -> sp.csr_matrix:
    """Forward covariant difference along ``j`` as an ``N^n x N^n`` matrix."""
    idx = _flat(grid)
    h = grid.h
    rows = idx.ravel()
    diag = sp.csr_matrix((np.full(grid.size, 1j / h), (rows, rows)), shape=(grid.size,) * 2)
    if grid.periodic:
        src = idx.ravel()
        dst = np.roll(idx, -1, axis=j).ravel()
        ph = theta[j].ravel()
    else:
        sl = [slice(None)] * grid.n
        sl[j] = slice(0, -1)
        sh = [slice(None)] * grid.n
        sh[j] = slice(1, None)
        src = idx[tuple(sl)].ravel()
        dst = idx[tuple(sh)].ravel()
        ph = theta[j][tuple(sl)].ravel()
    off = sp.csr_matrix((-1j / h * np.exp(-1j * ph), (src, dst)), shape=(grid.size,) * 2)
    return (diag + off).tocsr()


def edge_derivative_matrix(grid: Grid, theta: np.ndarray, j: int) -> sp.csr_matrix:
    """Covariant difference on every edge touching the grid along ``j``.

    For Dirichlet grids this appends one row per line for the edge entering
    from the zero exterior, so that ``sum_j L_j^* L_j`` has the uniform
    diagonal ``2n/h^2``.
    """
    Ln = node_derivative_matrix(grid, theta, j)
    if grid.periodic:
        return Ln
    idx = _flat(grid)
    sl = [slice(None)] * grid.n
    sl[j] = 0
    first = idx[tuple(sl)].ravel()
    ghost = sp.csr_matrix((np.full(first.size, -1j / grid.h), (np.arange(first.size), first)),
                          shape=(first.size, grid.size))
    return sp.vstack([Ln, ghost]).tocsr()


@dataclass
class Spectrum:
    values: np.ndarray
    vectors: np.ndarray

    def reconstruction_error(self, H) -> float:
        U, w = self.vectors, self.values
        Hd = H.toarray() if sp.issparse(H) else np.asarray(H)
        R = (U * w) @ U.conj().T - Hd
        return float(np.linalg.norm(R, 2) / max(np.linalg.norm(Hd, 2), 1e-300))

    def orthonormality_error(self) -> float:
        U = self.vectors
        return float(np.max(np.abs(U.conj().T @ U - np.eye(U.shape[1]))))


@dataclass(eq=False)
class HOperator:
    """``H = sum_j L_j^* L_j + diag(V)`` on a grid, with cached spectral data."""

    grid: Grid
    theta: np.ndarray
    V: np.ndarray
    L: list
    L_edge: list
    H: sp.csr_matrix
    cap: int = DEFAULT_CAP
    _spec: Spectrum | None = field(default=None, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _lu: object = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.grid.size

    def dense(self) -> np.ndarray:
        return self.H.toarray()

    def matvec(self, u: np.ndarray) -> np.ndarray:
        return (self.H @ np.asarray(u).ravel()).reshape(self.grid.shape)

    def quadratic_form(self, u) -> float:
        v = np.asarray(u, dtype=complex).ravel()
        return float(np.real(np.vdot(v, self.H @ v))) * self.grid.cell_volume

    def energy(self, u) -> float:
        """``sum_j ||L_j u||^2 + ||V^{1/2} u||^2`` with h-weighted norms."""
        v = np.asarray(u, dtype=complex).ravel()
        kin = sum(float(np.sum(np.abs(Lj @ v) ** 2)) for Lj in self.L_edge)
        pot = float(np.sum(self.V.ravel() * np.abs(v) ** 2))
        return (kin + pot) * self.grid.cell_volume

    def hermitian_defect(self) -> float:
        D = self.H - self.H.conj().T
        nrm = spla.norm(self.H, 1)
        return float(abs(D).max() / nrm) if D.nnz else 0.0

    def spectral(self) -> Spectrum:
        with self._lock:
            if self._spec is None:
                self._spec = spectral_decompose(self.H, self.cap)
            return self._spec

    @property
    def has_spectrum(self) -> bool:
        return self._spec is not None

    def norm_bound(self) -> float:
        # Gershgorin bound on the largest eigenvalue
        return float(abs(self.H).sum(axis=1).max())

    def solve(self, rhs: np.ndarray, shift: float = 0.0) -> np.ndarray:
        """Sparse direct solve of ``(H + shift) u = rhs``."""
        b = np.asarray(rhs, dtype=complex).reshape(self.grid.size, -1)
        if shift == 0.0:
            with self._lock:
                if self._lu is None:
                    self._lu = spla.splu(self.H.tocsc())
                lu = self._lu
        else:
            A = (self.H + shift * sp.identity(self.size, format="csr")).tocsc()
            lu = spla.splu(A)
        x = lu.solve(b)
        # one step of refinement keeps the residual at round-off
        A = self.H if shift == 0.0 else self.H + shift * sp.identity(self.size, format="csr")
        x = x + lu.solve(b - A @ x)
        return x.reshape(np.asarray(rhs).shape)


def assemble(grid: Grid, theta: np.ndarray | None = None, V: np.ndarray | float | None = None,
             cap: int = DEFAULT_CAP) -> HOperator:
    """Build the lattice operator from edge phases and a nonnegative weight."""
    theta = zero_phases(grid) if theta is None else grid.check_phases(theta)
    if V is None:
        V = np.zeros(grid.shape)
    elif np.isscalar(V):
        V = np.full(grid.shape, float(V))
    V = grid.check_field(np.asarray(V, dtype=float), "V")
    if np.any(V < 0):
        raise ValueError("potential must be nonnegative")
    Ln = [node_derivative_matrix(grid, theta, j) for j in range(grid.n)]
    Le = [edge_derivative_matrix(grid, theta, j) for j in range(grid.n)]
    H = sum((Lj.conj().T @ Lj for Lj in Le), sp.csr_matrix((grid.size, grid.size), dtype=complex))
    H = (H + sp.diags(V.ravel().astype(complex))).tocsr()
    H = 0.5 * (H + H.conj().T)
    H.sum_duplicates()
    H.eliminate_zeros()
    return HOperator(grid, theta, V, Ln, Le, H.tocsr(), cap)


def free_laplacian(grid: Grid, cap: int = DEFAULT_CAP) -> HOperator:
    """``-Delta`` with the grid's boundary condition."""
    return assemble(grid, None, None, cap)


def laplacian_eigenvalues(grid: Grid) -> np.ndarray:
    """Closed-form spectrum of the Dirichlet or periodic lattice ``-Delta``."""
    i = np.arange(1, grid.N + 1) if not grid.periodic else np.arange(grid.N)
    if grid.periodic:
        one = (4 / grid.h**2) * np.sin(np.pi * i / grid.N) ** 2
    else:
        one = (4 / grid.h**2) * np.sin(i * np.pi / (2 * (grid.N + 1))) ** 2
    tot = np.zeros(())
    for _ in range(grid.n):
        tot = np.add.outer(tot, one)
    return np.sort(tot.ravel())


def spectral_decompose(H, cap: int = DEFAULT_CAP) -> Spectrum:
    """Dense eigendecomposition of a Hermitian matrix."""
    M = H.shape[0]
    if M > cap:
        raise ValueError(
            f"{M} nodes exceed the dense cap of {cap}; use shifted solves (HOperator.solve) instead")
    Hd = H.toarray() if sp.issparse(H) else np.asarray(H)
    w, U = sla.eigh(Hd, driver="evd")
    return Spectrum(w, U)


def _symbol(name: str, lam: np.ndarray, lam0: float, y: float, t: float, scale: float):
    tiny = 1e-10 * scale
    if name == "sqrt":
        return np.sqrt(np.maximum(lam, 0.0))
    if name == "heat":
        if t < 0:
            raise ValueError("time must be nonnegative")
        return np.exp(-t * lam)
    if name == "imag_power":
        out = np.zeros(lam.shape, dtype=complex)
        pos = lam > tiny
        out[pos] = np.exp(1j * y * np.log(lam[pos]))
        return out
    shifted = lam + lam0
    if np.any(np.abs(shifted) <= tiny):
        raise ValueError(f"{name} is singular on the spectrum; pass a positive shift")
    if name == "inv_sqrt":
        return 1.0 / np.sqrt(shifted)
    if name == "inv":
        return 1.0 / shifted
    raise ValueError(f"unknown symbol {name!r}; choose from {SYMBOLS}")


def default_shift(op: HOperator) -> float:
    """Shift used when the spectrum touches zero: ``1e-8 * max eigenvalue``."""
    w = op.spectral().values
    top = max(abs(w[-1]), 1e-300)
    return 1e-8 * top if w[0] <= 1e-10 * top else 0.0


def function_matrix(op: HOperator, name: str, lam0: float = 0.0, y: float = 0.0,
                    t: float = 0.0) -> np.ndarray:
    """Dense ``f(H) = U f(Lambda) U^*``."""
    S = op.spectral()
    fv = _symbol(name, S.values, lam0, y, t, max(abs(S.values[-1]), 1.0))
    U = S.vectors
    return (U * fv) @ U.conj().T


def apply_function(op: HOperator, name: str, u: np.ndarray, lam0: float = 0.0,
                   y: float = 0.0, t: float = 0.0) -> np.ndarray:
    """Apply ``f(H)`` to a field through the spectral cache."""
    S = op.spectral()
    fv = _symbol(name, S.values, lam0, y, t, max(abs(S.values[-1]), 1.0))
    v = np.asarray(u, dtype=complex).reshape(op.size, -1)
    out = S.vectors @ (fv[:, None] * (S.vectors.conj().T @ v))
    return out.reshape(np.asarray(u).shape)


# ---------------------------------------------------------------------------
# domination

def heat_domination_check(op: HOperator, lap: HOperator, t: float, u: np.ndarray) -> float:
    """``max(|e^{-tH} u| - e^{t Delta} |u|)`` over nodes."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    a = np.abs(apply_function(op, "heat", u, t=t))
    b = np.real(apply_function(lap, "heat", np.abs(u).astype(complex), t=t))
    return float(np.max(a - b))


def kato_simon_check(op: HOperator, lap: HOperator, lam: float, f: np.ndarray) -> float:
    """``max(|(H+lam)^{-1} f| - (-Delta+lam)^{-1} |f|)`` over nodes."""
    if not lam > 0:
        raise ValueError("shift must be positive")
    a = np.abs(op.solve(f, lam))
    b = np.real(lap.solve(np.abs(f).astype(complex), lam))
    return float(np.max(a - b))


# ---------------------------------------------------------------------------
# kernels

@dataclass
class KernelSlice:
    grid: Grid
    source: tuple
    values: np.ndarray
    shift: float
    distances: np.ndarray
    exponent: float | None = None
    fit_range: tuple | None = None
    residual_off_source: float | None = None
    exponent_images: float | None = None
    amplitude_images: float | None = None

    def profile(self) -> np.ndarray:
        """Rows of (distance, |Gamma|) sorted by distance."""
        d = self.distances.ravel()
        g = np.abs(self.values).ravel()
        order = np.argsort(d, kind="stable")
        return np.column_stack([d[order], g[order]])


def fit_decay_exponent(distances, values, rmin: float, rmax: float) -> float:
    """Least-squares slope of ``log|values|`` against ``log distance`` on [rmin, rmax]."""
    d = np.ravel(distances)
    g = np.abs(np.ravel(values))
    sel = (d >= rmin) & (d <= rmax) & (g > 0)
    if np.count_nonzero(sel) < 2 or np.ptp(d[sel]) == 0:
        raise ValueError("fit range holds fewer than two distinct radii")
    slope, _ = np.polyfit(np.log(d[sel]), np.log(g[sel]), 1)
    return float(slope)


def image_sources(grid: Grid, y, reps: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Mirror images of a node under the zero ghost layers at ``-1`` and ``N``.

    Returns physical positions ``(m, n)`` and signs ``(m,)``: odd reflections
    ``-2 - y`` flip the sign, and everything repeats with period ``2(N + 1)``.
    """
    P = 2 * (grid.N + 1)
    per_axis = []
    for yj in y:
        shifts = P * np.arange(-reps, reps + 1)
        pos = np.concatenate([yj + shifts, -2 - yj + shifts])
        sg = np.concatenate([np.ones(len(shifts)), -np.ones(len(shifts))])
        per_axis.append((pos, sg))
    idx = np.stack(np.meshgrid(*[a[0] for a in per_axis], indexing="ij"), -1).reshape(-1, grid.n)
    sgn = np.prod(np.stack(np.meshgrid(*[a[1] for a in per_axis], indexing="ij"), -1).reshape(-1, grid.n), axis=1)
    return np.asarray(grid.origin) + grid.h * idx, sgn


def fit_image_exponent(grid: Grid, y, values, rmin: float, rmax: float,
                       reps: int = 3, bounds=(-3.0, -0.2)) -> tuple[float, float]:
    """Fit ``|Gamma(x)| ~ A sum_m s_m |x - y_m|^alpha`` over the mirror images of ``y``.

    Removes the Dirichlet walls from the decay fit. Returns ``(alpha, A)``.
    """
    if grid.periodic:
        raise ValueError("image correction needs Dirichlet walls")
    X = grid.coords()
    x0 = X[tuple(y)]
    d = np.sqrt(np.sum((X - x0) ** 2, axis=-1))
    g = np.abs(np.asarray(values))
    sel = (d >= rmin) & (d <= rmax) & (g > 0)
    if np.count_nonzero(sel) < 3:
        raise ValueError("fit range holds too few nodes")
    pts = X[sel]
    lg = np.log(g[sel])
    src, sgn = image_sources(grid, y, reps)
    D = np.sqrt(np.sum((pts[:, None, :] - src[None, :, :]) ** 2, axis=-1))

    def model(a):
        S = (D**a) @ sgn
        ok = S > 0
        if np.count_nonzero(ok) < 3:
            return np.inf, 0.0
        c = float(np.mean(lg[ok] - np.log(S[ok])))
        return float(np.mean((lg[ok] - c - np.log(S[ok])) ** 2)) + (~ok).mean(), c

    res = minimize_scalar(lambda a: model(a)[0], bounds=bounds, method="bounded",
                          options={"xatol": 1e-6})
    return float(res.x), float(np.exp(model(res.x)[1]))


def green_kernel(op: HOperator, y, lam0: float = 0.0, fit_range=None) -> KernelSlice:
    """Column ``(H + lam0)^{-1} delta_y / h^n`` with a log-log decay fit.

    Besides the raw slope, Dirichlet grids get an exponent fitted against
    the mirror-image sum, which removes the wall-induced steepening.
    The default fit range is ``[4h, L/4]`` for side length ``L``; when that
    is narrower than ``h`` it is widened to ``[2h, L/2 - h]``.
    """
    g = op.grid
    y = tuple(int(v) for v in y)
    delta = np.zeros(g.shape, dtype=complex)
    delta[y] = 1.0 / g.cell_volume
    try:
        col = op.solve(delta, lam0)
    except RuntimeError as exc:
        raise ValueError(f"singular system: {exc}") from exc
    if not np.all(np.isfinite(col)):
        raise ValueError("singular system: non-finite kernel")
    X = g.coords()
    dist = np.sqrt(np.sum((X - X[y]) ** 2, axis=-1))
    res = (op.H @ col.ravel() + lam0 * col.ravel()).reshape(g.shape)
    res[y] = 0.0
    if fit_range is None:
        lo, hi = 4 * g.h, g.side_length / 4
        if hi - lo < g.h:
            lo, hi = 2 * g.h, g.side_length / 2 - g.h
        fit_range = (lo, hi)
    try:
        expo = fit_decay_exponent(dist, col, *fit_range)
    except ValueError:
        expo = None
    img = (None, None)
    if not g.periodic:
        try:
            img = fit_image_exponent(g, y, col, *fit_range)
        except ValueError:
            pass
    return KernelSlice(g, y, col, lam0, dist, expo, tuple(fit_range),
                       float(np.max(np.abs(res)) / np.max(np.abs(col))), *img)


# ---------------------------------------------------------------------------
# commutator identity

def commutator_residual(op: HOperator, F: np.ndarray, dF: np.ndarray, k: int, u: np.ndarray) -> float:
    """Relative defect of ``[L_k, H_0] = -sum_j (2i F_jk L_j + d_j F_jk)``.

    ``F`` holds ``F[j, k] = d_j a_k - d_k a_j`` on the nodes, shape
    ``(n, n) + grid.shape``, and ``dF[j, k, l] = d_l F[j, k]``. ``op`` must
    have ``V = 0``. Norms are h-weighted l^2; the result is the defect norm
    divided by ``||u||``.
    """
    g = op.grid
    v = np.asarray(u, dtype=complex).ravel()
    Lk = op.L[k]
    lhs = Lk @ (op.H @ v) - op.H @ (Lk @ v)
    rhs = np.zeros_like(v)
    for j in range(g.n):
        # the bracket of L_k with L_j is -i F[j,k]; summing it over j gives this form
        rhs += -2j * F[j, k].ravel() * (op.L[j] @ v) - dF[j, k, j].ravel() * v
    return float(np.linalg.norm(lhs - rhs) / np.linalg.norm(v))


def field_on_grid(grid: Grid, B) -> tuple[np.ndarray, np.ndarray]:
    """``(F, dF)`` node samples of a MagneticField, shapes ``(n,n)+S`` and ``(n,n,n)+S``."""
    X = grid.coords()
    F = np.moveaxis(B(X), (-2, -1), (0, 1))
    if B.grad is None:
        raise ValueError("field needs an analytic gradient")
    dF = np.moveaxis(B.grad(X), (-3, -2, -1), (0, 1, 2))
    return F, dF
