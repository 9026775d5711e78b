import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atomic_fcgcg import experiments as ex
from atomic_fcgcg.core import ActiveIterate
from atomic_fcgcg.heat import (
    BoundaryTooClose,
    HeatDual,
    HeatGrid,
    HeatProblem,
    check_nondegeneracy,
    heat_adjoint,
    heat_forward,
    make_dataset,
    quadratic_growth_margin,
)

TRUTH = [((0.75, 0.75), 25.0), ((0.25, 0.25), -10.0)]


@pytest.fixture(scope="module")
def grid8():
    return HeatGrid(8, 1e-3, 0.1)


@pytest.fixture(scope="module")
def grid16():
    return HeatGrid(16, 1e-3, 0.1)


@pytest.fixture(scope="module")
def shipped():
    cfg = ex.resolve(ex.shipped_config("heat_414"))
    return cfg, ex.build(cfg)


def leading_mode(grid):
    xy = grid.all_coords()
    v = np.sin(np.pi * xy[:, 0]) * np.sin(np.pi * xy[:, 1])
    mu = 2 * 2.0 * (1 - np.cos(np.pi * grid.h)) / grid.h**2  # eigenvalue of -Lap_h
    return v, mu


def test_grid_validation():
    with pytest.raises(ValueError):
        HeatGrid(8, 3e-3, 0.1)
    with pytest.raises(ValueError):
        HeatGrid(8, 0.0, 0.1)
    with pytest.raises(ValueError):
        HeatGrid(0)


def test_factorization_accuracy(grid16, rng):
    b = rng.standard_normal(grid16.size)
    x = grid16.factorization.solve(b)
    assert np.linalg.norm(grid16.system @ x - b) <= 1e-12 * np.linalg.norm(b)


def test_grid_geometry():
    g = HeatGrid(127)
    assert g.h == 1 / 128
    assert g.steps == 100
    node = g.nearest_node((0.75, 0.75))
    assert np.allclose(g.coords(node), (0.75, 0.75))


def test_forward_zero(grid8):
    assert not np.any(heat_forward(np.zeros(grid8.size), grid8))


def test_forward_linear(grid8, rng):
    a, b = rng.standard_normal((2, grid8.size))
    lhs = heat_forward(2 * a - 3 * b, grid8)
    rhs = 2 * heat_forward(a, grid8) - 3 * heat_forward(b, grid8)
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-13)


def test_forward_leading_eigenvector_decay(grid8):
    v, mu = leading_mode(grid8)
    y = heat_forward(v, grid8)
    factor = (1 + grid8.dt * mu) ** (-grid8.steps)
    assert np.abs(y - factor * v).max() <= 1e-13


def test_forward_matches_dense_eigendecomposition_oracle(grid8):
    # v_1 is an exact eigenvector of the dense Laplacian too
    L = grid8.laplacian.toarray()
    w, V = np.linalg.eigh(L)
    v, mu = leading_mode(grid8)
    assert -w.max() == pytest.approx(mu, rel=1e-12)


def _semigroup_error(grid):
    L = grid.laplacian.toarray()
    w, V = np.linalg.eigh(L)
    u0 = np.zeros(grid.size)
    u0[grid.nearest_node((0.5, 0.5))] = 1.0 / grid.h**2
    exact = V @ (np.exp(grid.T * w) * (V.T @ u0))
    y = heat_forward(u0, grid)
    return np.linalg.norm(y - exact) / np.linalg.norm(exact)


def test_delta_load_matches_semigroup(grid8):
    assert _semigroup_error(grid8) <= 5e-3


def test_delta_load_error_is_first_order_in_dt():
    e1 = _semigroup_error(HeatGrid(8, 1e-3, 0.1))
    e2 = _semigroup_error(HeatGrid(8, 5e-4, 0.1))
    e4 = _semigroup_error(HeatGrid(8, 2.5e-4, 0.1))
    assert e1 / e2 == pytest.approx(2.0, rel=0.05)
    assert e2 / e4 == pytest.approx(2.0, rel=0.05)
    # leading-mode model of the implicit Euler error, 0.5 T dt mu_1^2
    _, mu = leading_mode(HeatGrid(8))
    assert e1 == pytest.approx(0.5 * 0.1 * 1e-3 * mu**2, rel=0.1)


def test_adjoint_zero(grid8):
    assert not np.any(heat_adjoint(np.zeros(grid8.size), grid8))


def test_adjoint_identity(grid16, rng):
    for _ in range(5):
        u, phi = rng.standard_normal((2, grid16.size))
        lhs = heat_adjoint(phi, grid16) @ u
        rhs = phi @ heat_forward(u, grid16)
        assert abs(lhs - rhs) <= 1e-12 * max(abs(rhs), 1.0)


def test_adjoint_leading_mode(grid8):
    v, mu = leading_mode(grid8)
    factor = (1 + grid8.dt * mu) ** (-grid8.steps)
    assert np.abs(heat_adjoint(v, grid8) - factor * v).max() <= 1e-13


def test_insert_zero_dual(grid8):
    prob = HeatProblem(grid8, np.zeros(grid8.size), 1e-3)
    a, v = prob.insert(HeatDual(np.zeros(grid8.size), 1e-3))
    assert (a.payload.node, a.payload.sign, v) == (0, 1, 0.0)


def test_insert_single_peak(grid8):
    prob = HeatProblem(grid8, np.zeros(grid8.size), 1e-3)
    z = np.zeros(grid8.size)
    z[17] = 0.002
    a, v = prob.insert(HeatDual(z, 1e-3))
    assert (a.payload.node, a.payload.sign) == (17, 1)
    assert v == pytest.approx(2.0)
    z[17], z[40] = -0.002, 0.002
    a, v = prob.insert(HeatDual(z, 1e-3))  # tie: lowest node
    assert (a.payload.node, a.payload.sign) == (17, -1)


def test_first_insertion_near_dominant_spike(shipped):
    cfg, built = shipped
    prob = built.problem
    dual = prob.dual_from_gradient(prob.loss_grad(np.zeros(prob.observation_dim)))
    a, _ = prob.insert(dual)
    d = np.linalg.norm(prob.grid.coords(a.payload.node) - np.array([0.75, 0.75]))
    assert a.payload.sign == 1
    assert d <= 3 * prob.grid.h


def test_dataset_noise_free(grid16):
    data = make_dataset(TRUTH, 0.0, 3, grid16)
    assert np.array_equal(data.y_d, data.clean)


def test_dataset_deterministic(grid16):
    a = make_dataset(TRUTH, 0.1, 3, grid16)
    b = make_dataset(TRUTH, 0.1, 3, grid16)
    assert np.array_equal(a.y_d, b.y_d)
    assert not np.array_equal(a.y_d, make_dataset(TRUTH, 0.1, 4, grid16).y_d)


def test_dataset_noise_level(shipped):
    cfg, built = shipped
    data = built.context["dataset"]
    ratio = np.linalg.norm(data.y_d - data.clean) / np.linalg.norm(data.clean)
    assert abs(ratio - 0.1) <= 1e-12
    assert data.noise_rel == 0.1


def test_atom_forward_scaling(grid8):
    beta = 1e-3
    prob = HeatProblem(grid8, np.zeros(grid8.size), beta)
    s = prob.spike(20, -1)
    e = np.zeros(grid8.size)
    e[20] = 1.0 / grid8.h**2
    expect = -grid8.h * heat_forward(e, grid8) / beta
    assert np.allclose(prob.atom_forward(s), expect, rtol=1e-13, atol=0)
    assert prob.atom_key(s) == (20, -1)


def test_regularizer_and_spikes(grid8):
    prob = HeatProblem(grid8, np.zeros(grid8.size), 0.5)
    it = ActiveIterate([prob.make_atom(prob.spike(10, 1)), prob.make_atom(prob.spike(30, -1))], [0.2, 0.3])
    assert prob.regularizer(it) == pytest.approx(0.5)
    sp = prob.spikes(it)
    assert [c for *_, c in sp] == pytest.approx([0.4, -0.6])
    rows = prob.atom_rows(it)
    back = prob.iterate_from_rows(rows)
    assert back.keys == it.keys and np.array_equal(back.weights, it.weights)


def test_atom_distance(grid8):
    prob = HeatProblem(grid8, np.zeros(grid8.size), 1.0)
    a, b = prob.make_atom(prob.spike(0, 1)), prob.make_atom(prob.spike(1, -1))
    assert prob.atom_distance(a, b) == pytest.approx(2 + grid8.h)


@settings(max_examples=100)
@given(node=st.integers(0, 255), sign=st.sampled_from([-1, 1]), seed=st.integers(0, 2**31 - 1))
def test_problem_adjoint_consistency(grid16, node, sign, seed):
    prob = HeatProblem(grid16, np.zeros(grid16.size), 1e-3)
    y = np.random.default_rng(seed).standard_normal(grid16.size)
    a = prob.make_atom(prob.spike(node, sign))
    lhs = float(a.forward_image @ y)
    # dual_from_gradient(y) represents -K_* y
    rhs = -prob.dual_from_gradient(y).value_at(a)
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs))


@settings(max_examples=50)
@given(seed=st.integers(0, 2**31 - 1))
def test_insert_dominates_sampled_atoms(grid16, seed):
    rng = np.random.default_rng(seed)
    prob = HeatProblem(grid16, rng.standard_normal(grid16.size), 1e-2)
    dual = prob.dual_from_gradient(prob.loss_grad(np.zeros(grid16.size)))
    _, v = prob.insert(dual)
    for node in rng.integers(0, grid16.size, 20):
        for s in (-1, 1):
            assert v >= dual.value_at(prob.make_atom(prob.spike(int(node), s)))


def test_nondegeneracy_quadratic_model():
    g = HeatGrid(31)
    beta = 1e-3
    x0 = g.coords(g.nearest_node((0.5, 0.5)))
    xy = g.all_coords()
    z = beta * (1 - np.sum((xy - x0) ** 2, axis=1))
    rep = check_nondegeneracy(z, g.nearest_node((0.5, 0.5)), g)
    assert np.allclose(rep.hessian, -2 * beta * np.eye(2), rtol=1e-6)
    assert rep.passed
    assert rep.growth_radius == pytest.approx(6 * g.h)
    # exact quadratic: the growth inequality holds with constant gamma / 4
    m = quadratic_growth_margin(z, beta, rep.node, rep.gamma, rep.growth_radius, g)
    assert m >= -1e-15


def test_nondegeneracy_flat_fails():
    g = HeatGrid(31)
    rep = check_nondegeneracy(np.full(g.size, 1e-3), g.nearest_node((0.5, 0.5)), g)
    assert rep.max_eigenvalue == pytest.approx(0.0, abs=1e-9)
    assert not rep.passed


def test_nondegeneracy_boundary():
    g = HeatGrid(31)
    with pytest.raises(BoundaryTooClose):
        check_nondegeneracy(np.zeros(g.size), g.nearest_node((0.05, 0.5)), g)
