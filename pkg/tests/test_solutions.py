import math

import numpy as np
import pytest

from magriesz.families import phases_from_field, polynomial_field
from magriesz.grid import Cube, centered_cube, make_grid
from magriesz.operators import assemble
from magriesz.solutions import (caccioppoli_check, decay_probe, discrete_laplacian, local_solution,
                                mean_value_check, scale_suite, subharmonic_identity_check,
                                subharmonic_residuals, weighted_mean_value_check)


def centred(N, side):
    h = side / N
    return make_grid(2, N, h, origin=-(N - 1) * h / 2)


def test_linear_boundary_data_is_exactly_harmonic():
    g = centred(32, 4.0)
    op = assemble(g)
    Q = centered_cube(g, [16, 16], 4)
    lin = lambda x: 1.0 + 0.5 * x[..., 0] - 0.25 * x[..., 1]
    pr = local_solution(op, Q, boundary=lin)
    exact = lin(g.coords())
    assert np.max(np.abs(pr.u[pr.solved] - exact[pr.solved])) < 1e-12
    assert pr.residual < 1e-12


def test_discrete_laplacian_of_quadratic():
    g = centred(10, 2.0)
    X = g.coords()
    L = discrete_laplacian(X[..., 0] ** 2 + 3 * X[..., 1] ** 2, g)
    assert np.allclose(L[1:-1, 1:-1], 8.0)
    assert np.isnan(L[0, 0])


def make_probe(N, mode="boundary"):
    g = centred(N, 4.0)
    B = polynomial_field([1.0, 0.3, -0.2, 0.1, 0.0, 0.05])
    X = g.coords()
    V = 1 + X[..., 0] ** 2 + 0.5 * X[..., 1] ** 2
    op = assemble(g, phases_from_field(g, B), V)
    Q = centered_cube(g, [N // 2] * 2, N // 8)
    if mode == "boundary":
        return local_solution(op, Q, boundary=lambda x: np.exp(1j * (0.7 * x[..., 0] - 0.4 * x[..., 1])))
    f = np.exp(-np.sum((X - 1.5) ** 2, -1) / (2 * 0.15**2))
    lo, hi = Q.bounds(4)
    f[lo[0]:hi[0], lo[1]:hi[1]] = 0
    return local_solution(op, Q, source=f)


@pytest.mark.parametrize("mode", ["boundary", "source"])
def test_symmetric_identity_is_exact(mode):
    pr = make_probe(32, mode)
    r = subharmonic_residuals(pr)
    assert r["symmetric"] <= 1e-9 * max(1.0, r["scale"])
    assert r["min_laplacian"] >= -1e-10


def test_refinement_pair_contracts():
    out = subharmonic_identity_check(make_probe(64), make_probe(128))
    assert out["nonnegative"]
    assert out["ratio"] <= 0.67
    with pytest.raises(ValueError):
        subharmonic_identity_check(make_probe(64), make_probe(32))


def test_probe_validation():
    g = centred(16, 4.0)
    op = assemble(g)
    Q = centered_cube(g, [8, 8], 2)
    with pytest.raises(ValueError):
        local_solution(op, Q)
    with pytest.raises(ValueError):
        local_solution(op, Q, source=np.ones(g.shape), boundary=np.ones(g.shape))
    with pytest.raises(ValueError, match="vanish"):
        local_solution(op, Q, source=np.ones(g.shape))
    with pytest.raises(ValueError):
        local_solution(op, Cube(g, (0, 0), 4), boundary=np.ones(g.shape))


def test_local_inequalities_finite():
    pr = make_probe(64)
    Q = pr.cube
    c = caccioppoli_check(pr, Q)
    assert 0 < c["constant"] < math.inf
    m = mean_value_check(pr, Q, 2.0, 2.0)
    assert m["constant"] >= 1 - 1e-12      # a sup dominates any mean
    with pytest.raises(ValueError):
        mean_value_check(pr, Q, 2.0, 3.0)
    rep = decay_probe(pr, Q)
    assert {"nesting_u", "gradient_sup", "gradient_controls_mass"} <= set(rep.ids())


def test_weighted_mean_value_requires_subharmonic():
    g = centred(16, 2.0)
    X = g.coords()
    Q = centered_cube(g, [8, 8], 4)
    F = np.sum(X**2, -1)
    w = np.ones(g.shape)
    r = weighted_mean_value_check(w, F, g, Q, r=math.inf)
    assert r["constant"] == r["sup_constant"]
    with pytest.raises(ValueError, match="subharmonic"):
        weighted_mean_value_check(w, 5 - F, g, Q)
    with pytest.raises(ValueError):
        weighted_mean_value_check(w, -F, g, Q)


def test_scale_suite_rows():
    g = centred(64, 4.0)
    op = assemble(g, None, 1 + np.sum(g.coords() ** 2, -1))

    def probe_for(size):
        Q = centered_cube(g, [32, 32], size)
        return local_solution(op, Q, boundary=lambda x: np.exp(1j * x[..., 0])), Q

    suite = scale_suite(probe_for, [2, 4])
    assert "caccioppoli" in suite.ids()
    assert math.isfinite(suite.spread("caccioppoli"))
    assert suite.bounded("nesting_u", limit=1e6)
