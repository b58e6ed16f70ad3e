import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magriesz.families import (bracket_potential, constant_field, landau_phases, phases_from_field,
                               polynomial_field, random_phases, symmetric_phases_periodic)
from magriesz.grid import (Cube, Grid, centered_cube, covariant_gradient, diamagnetic_violations,
                           gauge_transform, gradient_modulus, make_grid, plaquette_flux, zero_phases)
from magriesz.operators import (assemble, field_on_grid, commutator_residual, free_laplacian,
                                heat_domination_check, kato_simon_check, laplacian_eigenvalues)


def rand_field(rng, grid):
    return rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(4, 8, 1.0)
    with pytest.raises(ValueError):
        Grid(2, 1, 1.0)
    with pytest.raises(ValueError):
        Grid(2, 8, -1.0)
    with pytest.raises(ValueError):
        Grid(2, 8, 1.0, "neumann")
    g = make_grid(2, 8, 0.5, origin=-1.75)
    assert np.allclose(g.center(), 0)
    assert g.side_length == 4.0
    assert Grid.from_dict(g.to_dict()) == g


def test_cube_dilation_rule():
    g = make_grid(2, 16, 1.0)
    q = Cube(g, (4, 4), 1)
    # the strict rule keeps 2Q of a single node equal to the node itself
    assert q.dilated_slices(2) == (slice(4, 5), slice(4, 5))
    q = Cube(g, (4, 4), 4)
    lo, hi = q.bounds(2)
    assert list(lo) == [2, 2] and list(hi) == [10, 10]
    assert Cube(g, (0, 0), 4).leaves_grid(2)
    with pytest.raises(ValueError):
        centered_cube(g, [1, 1], 6)


def test_free_spectrum_matches_closed_form():
    g = make_grid(2, 8, 0.5, origin=-2)
    ev = assemble(g).spectral().values
    assert np.max(np.abs(np.sort(ev) - np.sort(laplacian_eigenvalues(g)))) < 1e-10


def test_landau_gauges_share_spectrum():
    g = Grid(2, 12, 1.0, "periodic")
    flux = 2 * np.pi * 3 / 144
    specs = [np.linalg.eigvalsh(assemble(g, t).dense())
             for t in (landau_phases(g, flux, 0), landau_phases(g, flux, 1),
                       symmetric_phases_periodic(g, flux))]
    assert np.max(np.abs(specs[0] - specs[1])) < 1e-9
    assert np.max(np.abs(specs[0] - specs[2])) < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gauge_covariance(seed):
    rng = np.random.default_rng(seed)
    g = make_grid(2, 6, 0.3)
    th = random_phases(g, rng)
    phi = rng.uniform(-np.pi, np.pi, g.shape)
    u = rand_field(rng, g)
    u2, th2 = gauge_transform(u, th, phi, g)
    assert np.allclose(gradient_modulus(u2, th2, g), gradient_modulus(u, th, g), atol=1e-12)
    e1 = np.linalg.eigvalsh(assemble(g, th).dense())
    e2 = np.linalg.eigvalsh(assemble(g, th2).dense())
    assert np.max(np.abs(e1 - e2)) < 1e-9
    for j, k in ((0, 1),):
        assert np.allclose(plaquette_flux(th, g, j, k), plaquette_flux(th2, g, j, k), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([2, 3]))
def test_energy_identity_and_hermitian(seed, n):
    rng = np.random.default_rng(seed)
    g = make_grid(n, 6 if n == 2 else 4, 0.4, origin=-1.0)
    op = assemble(g, random_phases(g, rng), bracket_potential(2).sample(g))
    u = rand_field(rng, g)
    qf = op.quadratic_form(u)
    assert abs(op.energy(u) - qf) <= 1e-10 * qf
    assert op.hermitian_defect() < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_diamagnetic_exhaustive(seed):
    rng = np.random.default_rng(seed)
    g = make_grid(2, 7, 0.5)
    assert diamagnetic_violations(rand_field(rng, g), random_phases(g, rng), g) == 0


def test_diamagnetic_equality_case_not_flagged():
    # nonnegative data with zero phases attains equality on every edge
    g = make_grid(2, 6, 1.0)
    u = np.abs(np.random.default_rng(0).normal(size=g.shape))
    assert diamagnetic_violations(u, zero_phases(g), g) == 0
    # a phase that exactly cancels the data's winding also gives zero covariant difference
    w = np.exp(1j * np.pi * np.arange(6))[:, None] * np.ones((6, 6))
    th = zero_phases(g)
    th[0] = np.pi
    assert gradient_modulus(w, th, g)[:-1, :-1].max() < 1e-12


def test_domination_checks():
    rng = np.random.default_rng(3)
    g = make_grid(2, 8, 0.5, origin=-1.75)
    op = assemble(g, random_phases(g, rng), 1 + np.sum(g.coords() ** 2, -1))
    lap = free_laplacian(g)
    f = rand_field(rng, g)
    assert kato_simon_check(op, lap, 1.0, f) <= 1e-10 * np.abs(f).max()
    assert heat_domination_check(op, lap, 0.3, f) <= 1e-10 * np.abs(f).max()
    with pytest.raises(ValueError):
        kato_simon_check(op, lap, 0.0, f)
    with pytest.raises(ValueError):
        heat_domination_check(op, lap, -1.0, f)


def test_commutator_residual_refines():
    def resid(N):
        h = 10.0 / N
        g = make_grid(2, N, h, origin=-(N - 1) * h / 2)
        B = polynomial_field([1, 0.3, -0.2, 0.1, 0.05, 0.02])
        op = assemble(g, phases_from_field(g, B))
        X = g.coords()
        u = np.maximum(0, 1 - np.sum(X**2, -1) / 9) ** 6 * np.exp(1j * X[..., 0])
        F, dF = field_on_grid(g, B)
        return commutator_residual(op, F, dF, 0, u)

    r1, r2 = resid(40), resid(80)
    assert r2 / r1 < 0.67


def test_covariant_gradient_of_plane_wave():
    # with theta matching the wave the covariant difference vanishes off the boundary
    g = make_grid(2, 10, 0.2)
    k = 1.3
    u = np.exp(1j * k * g.coords()[..., 0])
    th = zero_phases(g)
    th[0] = k * g.h
    D = covariant_gradient(u, th, g)
    assert np.max(np.abs(D[0][:-1])) < 1e-12
    B = constant_field(2, 0.0)
    assert np.allclose(phases_from_field(g, B), 0)
