import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atomic_fcgcg.core import ActiveIterate, objective
from atomic_fcgcg.trace import (
    TraceDual,
    TraceInstance,
    TraceProblem,
    canonical_sign,
    growth_probe,
    planted_instance,
    spectral_gap_check,
)


def two_by_two(beta=0.1):
    A = np.array([np.diag([1.0, 0.0]), np.diag([0.0, 1.0])])
    return TraceProblem(TraceInstance(A, beta, np.array([1.0, 0.0])))


def random_symmetric(rng, n):
    A = rng.standard_normal((n, n))
    return (A + A.T) / 2


def test_instance_validation():
    A = np.zeros((1, 2, 2))
    A[0, 0, 1] = 1.0
    with pytest.raises(ValueError):
        TraceInstance(A, 0.1, np.zeros(1))
    with pytest.raises(ValueError):
        TraceInstance(np.zeros((0, 2, 2)), 0.1, np.zeros(0))
    with pytest.raises(ValueError):
        TraceInstance(np.zeros((1, 2, 2)), 0.0, np.zeros(1))


def test_atom_forward_identity_sensor():
    beta = 0.25
    prob = TraceProblem(TraceInstance(np.eye(3)[None], beta, np.zeros(1)))
    h = np.random.default_rng(0).standard_normal(3)
    assert prob.atom_forward(prob.atom(h)) == pytest.approx([1 / beta], rel=1e-14)


def test_atom_forward_diag_sensor():
    prob = two_by_two()
    assert prob.atom_forward(prob.atom([1.0, 0.0]))[0] == pytest.approx(10.0)


def test_atom_forward_dense_trace_oracle(rng):
    n, m, beta = 6, 5, 0.3
    A = np.array([random_symmetric(rng, n) for _ in range(m)])
    prob = TraceProblem(TraceInstance(A, beta, np.zeros(m)))
    h = rng.standard_normal(n)
    a = prob.atom(h)
    U = np.outer(a.h, a.h) / beta
    dense = np.array([np.trace(Aj @ U) for Aj in A])
    assert np.abs(prob.atom_forward(a) - dense).max() <= 1e-12 * max(1, np.abs(dense).max())


def test_atom_normalization_and_key():
    prob = two_by_two()
    a = prob.atom([-3.0, 4.0])
    assert np.linalg.norm(a.h) == pytest.approx(1.0, abs=1e-12)
    assert a.h[0] > 0
    b = prob.atom([3.0, -4.0])
    assert prob.atom_key(a) == prob.atom_key(b)
    assert canonical_sign(np.array([0.0, -1.0]))[1] == 1.0
    with pytest.raises(ValueError):
        prob.atom([0.0, 0.0])


def test_dual_matrix_examples(rng):
    prob = two_by_two()
    assert not np.any(prob.dual_matrix(np.zeros(2)))
    grad = prob.loss_grad(np.zeros(2))
    assert np.array_equal(grad, [-1.0, 0.0])
    assert np.allclose(prob.dual_matrix(grad), np.diag([1.0, 0.0]))
    inst = planted_instance(5, 12, 1, 0.1)
    P = TraceProblem(inst).dual_matrix(rng.standard_normal(12))
    assert np.linalg.norm(P - P.T) == 0.0


def test_insert_diagonal():
    prob = TraceProblem(TraceInstance(np.eye(2)[None], 1.0, np.zeros(1)))
    a, v = prob.insert(TraceDual(np.diag([3.0, 1.0]), 1.0))
    assert v == pytest.approx(3.0)
    assert np.allclose(a.payload.h, [1.0, 0.0], atol=1e-12)


def test_insert_zero_dual():
    prob = two_by_two()
    a, v = prob.insert(TraceDual(np.zeros((2, 2)), 0.1))
    assert v == 0.0
    assert np.array_equal(a.payload.h, [1.0, 0.0])


def test_insert_dominates_rayleigh_sampling():
    rng = np.random.default_rng(8)
    n, beta = 8, 0.5
    P = random_symmetric(rng, n)
    prob = TraceProblem(TraceInstance(np.eye(n)[None], beta, np.zeros(1)))
    a, v = prob.insert(TraceDual(P, beta))
    H = rng.standard_normal((100_000, n))
    H /= np.linalg.norm(H, axis=1, keepdims=True)
    sampled = np.max(np.einsum("sa,ab,sb->s", H, P, H)) / beta
    assert v >= sampled
    h = a.payload.h
    assert np.linalg.norm(P @ h - v * beta * h) <= 1e-10 * np.linalg.norm(P)


def test_spectral_gap_examples():
    beta = 0.1
    prob = two_by_two(beta)
    lam = 0.9 * beta  # U = 0.9 e1 e1^T
    it = ActiveIterate([prob.make_atom(prob.atom([1.0, 0.0]))], [lam])
    P = prob.dual_matrix(prob.loss_grad(it.observation(2)))
    rep = spectral_gap_check(P, beta)
    assert rep.passed
    assert rep.sigma1 == pytest.approx(0.1, abs=1e-14)
    assert rep.sigma2 == pytest.approx(0.0, abs=1e-14)
    assert not spectral_gap_check(beta * np.eye(3), beta).passed
    assert spectral_gap_check(np.diag([beta, beta / 2]), beta).passed


def test_growth_probe_without_gap():
    beta = 0.2
    rep = growth_probe(beta * np.eye(4), np.eye(4)[0], beta, samples=500)
    assert abs(rep.min_ratio) <= 1e-12


def test_growth_probe_with_gap():
    beta = 0.2
    P = np.diag([beta, 0.5 * beta, 0.1 * beta])
    rep = growth_probe(P, np.eye(3)[0], beta, samples=1000, kappa_min=(beta - 0.5 * beta) * beta / 2 - 1e-12)
    assert rep.passed


def test_compress_is_lossless(trace_run):
    prob, it = trace_run.problem, trace_run.iterate
    comp = prob.compress(it)
    assert np.allclose(prob.matrix(comp), prob.matrix(it), atol=1e-12)
    assert objective(comp, prob) == pytest.approx(objective(it, prob), rel=1e-12)


def test_rows_roundtrip(trace_run):
    prob, it = trace_run.problem, trace_run.iterate
    back = prob.iterate_from_rows(prob.atom_rows(it))
    assert np.allclose(prob.matrix(back), prob.matrix(it), atol=1e-13)


def test_iterates_psd(trace_run):
    U = trace_run.problem.matrix(trace_run.iterate)
    H = np.random.default_rng(0).standard_normal((10_000, U.shape[0]))
    H /= np.linalg.norm(H, axis=1, keepdims=True)
    assert np.einsum("sa,ab,sb->s", H, U, H).min() >= -1e-12


def test_optimality_at_stop(trace_run):
    prob, it = trace_run.problem, trace_run.iterate
    beta = prob.beta
    P = prob.dual_matrix(prob.loss_grad(it.observation(prob.observation_dim)))
    U = prob.matrix(it)
    assert np.linalg.eigvalsh(P).max() <= beta * (1 + 1e-9)
    assert abs(np.trace(P @ U) - beta * np.trace(U)) <= 1e-8 * beta * np.trace(U)


def test_planted_instance_rank_one_ensemble():
    inst = planted_instance(6, 20, 3, 0.1, ensemble="rank_one")
    assert inst.m == 20 and inst.n == 6
    assert np.linalg.matrix_rank(inst.sensors[0]) == 1
    with pytest.raises(ValueError):
        planted_instance(6, 20, 3, 0.1, ensemble="nope")


@settings(max_examples=100)
@given(seed=st.integers(0, 2**31 - 1))
def test_adjoint_consistency(seed):
    rng = np.random.default_rng(seed)
    inst = planted_instance(7, 15, seed % 1000, 0.2)
    prob = TraceProblem(inst)
    a = prob.make_atom(prob.atom(rng.standard_normal(7)))
    y = rng.standard_normal(15)
    lhs = float(a.forward_image @ y)
    rhs = -prob.dual_from_gradient(y).value_at(a)
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs))
