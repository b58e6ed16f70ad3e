import itertools
import math

import numpy as np
import pytest

from magriesz.families import (bracket_potential, constant_field, field_from_potential,
                               flux_accumulation_phases, planar_field, power_potential,
                               random_phases)
from magriesz.gauge import (gauged_edges, poincare_gauge, recover_phi, tree_gauge)
from magriesz.grid import Cube, Grid, make_grid, plaquette_flux, wrap_angle
from magriesz.operators import assemble
from magriesz.riesz import (RieszContext, TransformSpec, l1_maximal_check, pnorm_estimate,
                            stability_flag, transform_matrix)
from magriesz.weights import ainfty_profile, control_from_field, dyadic_sum, rh_constant


# weights ------------------------------------------------------------------

def test_rh_constant_of_constant_weight_is_one():
    g = make_grid(2, 16, 0.5)
    rep = rh_constant(np.full(g.shape, 3.0), 2.0, g, [0, 1, 2, 3])
    assert rep.rh_constant == pytest.approx(1.0)
    assert rep.doubling_constant == pytest.approx(2.0**2)


def test_rh_constant_matches_bruteforce():
    rng = np.random.default_rng(1)
    g = make_grid(2, 8, 1.0)
    w = rng.uniform(0.1, 2.0, g.shape)
    q = 3.0
    best = 0.0
    for lv in range(4):
        s = 2**lv
        for i, j in itertools.product(range(0, 8, s), repeat=2):
            b = w[i:i + s, j:j + s]
            best = max(best, np.mean(b**q) ** (1 / q) / np.mean(b))
    assert rh_constant(w, q, g, [0, 1, 2, 3]).rh_constant == pytest.approx(best, rel=1e-12)


def test_rh_rejects_bad_input():
    g = make_grid(2, 8, 1.0)
    with pytest.raises(ValueError):
        rh_constant(-np.ones(g.shape), 2.0, g, [0])
    with pytest.raises(ValueError):
        rh_constant(np.ones(g.shape), 1.0, g, [0])
    with pytest.raises(ValueError):
        rh_constant(np.ones(g.shape), 2.0, g, [4])


def test_ainfty_profile_polynomial_weight():
    N = 32
    g = make_grid(2, N, 0.25, origin=-(N - 1) * 0.125)
    prof = ainfty_profile(bracket_potential(2).sample(g), [0.25, 0.5], g, [0, 1, 2, 3])
    assert prof["a_infty_consistent"]
    assert all(math.isfinite(c) for _, c in prof["profile"])


def test_control_condition_finite_for_proportional_field():
    N = 24
    g = make_grid(2, N, 8 / N, origin=-(N - 1) * 4 / N)
    V = bracket_potential(2)
    rep = control_from_field(field_from_potential(V, 0.5), V, g, [0, 1, 2, 3])
    assert math.isfinite(rep.C1)


def test_dyadic_sum_levels():
    rep = dyadic_sum(lambda x: np.ones(x.shape[:-1]), np.zeros(3), 6)
    # constant weight: terms 2^l / (1 + 4^l), summable
    expect = sum(2.0**l / (1 + 4.0**l) for l in range(-6, 7))
    assert rep.total == pytest.approx(expect, rel=1e-10)
    assert rep.growth(3, 6) < 1.2
    sing = dyadic_sum(power_potential(-2, 1e-12), np.zeros(3), 10)
    assert sing.growth(5, 10) > 1.8


# gauge ----------------------------------------------------------------------

def test_constant_field_gauge_closed_form():
    g = Grid(2, 16, 0.25, "dirichlet", -2)
    Q = Cube(g, (2, 3), 8)
    b = 1.7
    gd = poincare_gauge(constant_field(2, b), g, Q)
    assert abs(gd.bounds["sup_h"] - b * Q.R * math.sqrt(2) / 4) < 1e-9
    assert gd.bounds["h_ratio"] <= math.sqrt(2) / 2 + 1e-12


def test_curl_residual_refines():
    def resid(N):
        g = Grid(2, N, 4.0 / N, "dirichlet", -2)
        B = planar_field(2, lambda x: 1 + np.sin(x[..., 0]),
                         lambda x: np.stack([np.cos(x[..., 0]), 0 * x[..., 0]], -1))
        return poincare_gauge(B, g, Cube(g, (0, 0), N)).residual["curl"]

    assert resid(16) / resid(32) >= 1.8


def test_recover_phi_and_spectral_invariance():
    b = 1.7
    g = Grid(2, 20, 0.2, "dirichlet", -2)
    th = flux_accumulation_phases(g, lambda x: b + 0 * x[..., 0])
    Q = Cube(g, (3, 4), 12)
    gd = poincare_gauge(constant_field(2, b), g, Q)
    phi, mm = recover_phi(th, gd, g)
    assert mm < 1e-9
    sub = Grid(2, 12, 0.2, "dirichlet", tuple(g.coords()[3, 4]))
    e1 = np.linalg.eigvalsh(assemble(sub, th[(slice(None),) + Q.slices]).dense())
    e2 = np.linalg.eigvalsh(assemble(sub, gauged_edges(gd)).dense())
    assert np.max(np.abs(e1 - e2)) < 1e-9
    bad = th.copy()
    bad[0, 8, 8] += 1.0
    with pytest.raises(ValueError, match="mismatch"):
        recover_phi(bad, gd, g)


def test_tree_gauge_keeps_flux_and_bound():
    rng = np.random.default_rng(5)
    g = make_grid(2, 12, 0.3)
    th = random_phases(g, rng, scale=0.2)
    Q = Cube(g, (2, 2), 8)
    d = tree_gauge(th, g, Q)
    # leftover phases plus d phi reproduce theta inside the cube
    rebuilt = d.edges.copy()
    phi = d.phi
    rebuilt[0][:-1] += phi[1:] - phi[:-1]
    rebuilt[1][:, :-1] += phi[:, 1:] - phi[:, :-1]
    orig = th[(slice(None),) + Q.slices]
    assert np.allclose(wrap_angle(rebuilt[0][:-1] - orig[0][:-1]), 0, atol=1e-12)
    assert np.allclose(wrap_angle(rebuilt[1][:, :-1] - orig[1][:, :-1]), 0, atol=1e-12)
    sub = make_grid(2, 8, 0.3)
    assert np.allclose(plaquette_flux(d.edges, sub, 0, 1),
                       plaquette_flux(orig, sub, 0, 1), atol=1e-12)


# riesz ----------------------------------------------------------------------

def _sign_vectors(n):
    return np.array(list(itertools.product([-1.0, 1.0], repeat=n))).T


@pytest.mark.parametrize("seed", range(4))
def test_pnorm_exact_cases_against_vertex_oracles(seed):
    A = np.random.default_rng(seed).standard_normal((5, 5))
    one = max(np.abs(A @ np.eye(5)).sum(axis=0))
    inf = max(np.max(np.abs(A @ s)) for s in _sign_vectors(5).T)
    assert pnorm_estimate(A, 1).value == pytest.approx(one, rel=1e-12)
    assert pnorm_estimate(A, math.inf).value == pytest.approx(inf, rel=1e-12)
    two = pnorm_estimate(A, 2.0, method="power", starts=16, tol=1e-12, maxiter=2000).value
    assert two == pytest.approx(np.linalg.svd(A, compute_uv=False)[0], rel=1e-6)


def test_pnorm_power_dominates_random_search():
    A = np.random.default_rng(1).standard_normal((5, 5))
    for p in (1.5, 3.0, 4.0):
        e = pnorm_estimate(A, p).value
        r = pnorm_estimate(A, p, method="random", probes=20000).value
        assert r <= e * (1 + 1e-12)
        assert (e - r) / e < 0.02


def test_pnorm_diagonal_and_errors():
    assert pnorm_estimate(np.diag([1.0, 2.0, 3.0]), 4).value == pytest.approx(3.0)
    with pytest.raises(ValueError):
        pnorm_estimate(np.eye(3), 0.5)
    with pytest.raises(ValueError):
        pnorm_estimate(np.eye(3), 3.0, method="exact")


def test_riesz_p2_bounds_small_grid():
    rng = np.random.default_rng(2)
    g = Grid(2, 10, 0.5, "dirichlet", -2.25)
    op = assemble(g, random_phases(g, rng), bracket_potential(2).sample(g))
    ctx = RieszContext(op)
    for spec in (TransformSpec("L H^-1/2", j=0), TransformSpec("L H^-1/2", j=1),
                 TransformSpec("V^1/2 H^-1/2")):
        assert pnorm_estimate(transform_matrix(ctx, spec), 2).value <= 1 + 1e-8
    with pytest.raises(ValueError):
        TransformSpec("nope")


def test_l1_maximal_ratios():
    rng = np.random.default_rng(4)
    g = Grid(2, 12, 0.5, "dirichlet", -2.75)
    op = assemble(g, random_phases(g, rng), bracket_potential(2).sample(g))
    H0 = assemble(g, op.theta)
    f = np.zeros(g.shape, dtype=complex)
    f[5, 6] = 1.0
    r1, r2 = l1_maximal_check(op, H0, f)
    assert r1 <= 1 + 1e-6 and r2 <= 2 + 1e-6
    with pytest.raises(ValueError):
        l1_maximal_check(op, H0, 0 * f)


def test_stability_flag():
    assert stability_flag([1.0, 1.05], [1.0, 1.1])[0] == "consistent"
    assert stability_flag([1.0, 2.5], [1.0, 1.0])[0] == "growth"
    assert stability_flag([1.0, 1.5], [1.0, 1.0])[0] == "inconclusive"
