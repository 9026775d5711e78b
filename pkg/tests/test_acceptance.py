"""One test per acceptance criterion, numbered 1 to 12.

Tolerances are the published ones; nothing here is loosened to make a run pass.
"""
import csv

import numpy as np
import pytest

from atomic_fcgcg import experiments as ex
from atomic_fcgcg.core import Termination
from atomic_fcgcg.diagnostics import (
    verify_active_pinning,
    verify_first_order,
    verify_monotone,
    verify_residual_dominance,
)
from atomic_fcgcg.losses import SquaredLoss
from atomic_fcgcg.mineffort import binariness_check
from atomic_fcgcg.subproblem import CoefficientProblem, brute_force_qp, solve_weights
from atomic_fcgcg.telemetry import read_records

pytestmark = pytest.mark.slow


def final_dual(run):
    prob, it = run.problem, run.iterate
    return prob.dual_from_gradient(prob.loss_grad(it.observation(prob.observation_dim)))


def test_criterion_01_heat_recovery(heat_run):
    run = heat_run
    h = run.problem.grid.h
    assert run.termination is Termination.OPTIMAL
    assert run.records[-1].k <= 15
    assert run.records[-1].residual <= 1e-10
    assert max(r.active_size for r in run.records) <= 4
    spikes = run.problem.spikes(run.iterate)
    assert len(spikes) == 2
    for truth, sign in (((0.75, 0.75), 1), ((0.25, 0.25), -1)):
        d = [np.hypot(x - truth[0], y - truth[1]) for x, y, _ in spikes]
        j = int(np.argmin(d))
        assert np.sign(spikes[j][2]) == sign
        assert d[j] <= 3 * h, f"spike nearest {truth} is {d[j] / h:.1f} h away"


def test_criterion_02_gcg_separation(heat_compare):
    out, code, summary = heat_compare
    assert code == 0
    g = {r.k: r for r in read_records(out / "gcg" / "telemetry.csv")}
    fc = read_records(out / "fcgcg" / "telemetry.csv")
    assert g[20].residual >= 0.05
    assert fc[-1].residual <= 1e-10
    assert summary["fcgcg"]["rate_fit"].zeta_hat < 0.75
    assert summary["gcg"]["rate_fit"].zeta_hat > 0.9


def test_criterion_03_monotone(shipped_runs):
    for name, run in shipped_runs.items():
        assert verify_monotone([r.objective for r in run.records], 1e-10), name


def test_criterion_04_first_order(shipped_runs):
    for name, run in shipped_runs.items():
        assert verify_first_order(run.iterate, run.problem, 1e-6).passed, name
    run = shipped_runs["heat_414"]
    beta = run.problem.beta
    z = final_dual(run).z
    assert np.abs(z).max() <= beta * (1 + 1e-6)
    for a in run.iterate.atoms:
        assert abs(z[a.payload.node]) >= beta * (1 - 1e-6)


def test_criterion_05_active_pinning(shipped_runs):
    for name, run in shipped_runs.items():
        checked = 0
        for r in run.records:
            if np.isfinite(r.pinning):
                assert r.pinning <= 10 * r.subproblem_tol, (name, r.k)
                checked += 1
        assert checked == len(run.records) - 1, name
        slack = 10 * run.records[-1].subproblem_tol
        assert verify_active_pinning(final_dual(run), run.iterate, slack).passed, name


def test_criterion_06_subproblem_oracle():
    rng = np.random.default_rng(20240601)
    count = 0
    while count < 200:
        N = int(rng.integers(1, 13))
        m = int(rng.integers(N, N + 7))
        G = rng.standard_normal((m, N))
        cp = CoefficientProblem(G, SquaredLoss(3.0 * rng.standard_normal(m)))
        lam, rep = solve_weights(cp, tol=1e-12)
        ref, flagged = brute_force_qp(cp)
        assert not flagged
        assert rep.residual <= 1e-12
        assert np.abs(lam - ref).max() <= 1e-8
        count += 1


@pytest.mark.parametrize("name", ["heat_414", "trace_d1", "mineffort_gaussian"])
def test_criterion_07_adjoint(name, shipped_runs):
    prob = shipped_runs[name].problem
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        if name == "heat_414":
            payload = prob.spike(int(rng.integers(prob.grid.size)), int(rng.choice([-1, 1])))
        elif name == "trace_d1":
            payload = prob.atom(rng.standard_normal(prob.instance.n))
        else:
            payload = prob.atom(rng.standard_normal(prob.instance.cells))
        a = prob.make_atom(payload)
        y = rng.standard_normal(prob.observation_dim)
        lhs = float(a.forward_image @ y)
        rhs = -prob.dual_from_gradient(y).value_at(a)
        worst = max(worst, abs(lhs - rhs) / (1 + abs(lhs)))
    assert worst <= 1e-12


def test_criterion_08_trace_rank_one():
    failures = []
    for seed in range(20):
        cfg = ex.resolve(ex.shipped_config("trace_d1"), seed=seed)
        assert (cfg["trace"]["n"], cfg["trace"]["m"], cfg["trace"]["ensemble"]) == (16, 128, "gaussian")
        assert cfg["trace"]["growth_samples"] == 1000
        run = ex.execute(cfg)
        rep = ex.trace_report(run.problem, run.iterate, cfg)
        g = rep["spectral_gap"]
        kappa = (g.sigma1 - g.sigma2) * run.problem.beta / 2 - 1e-6
        ok = (run.termination is Termination.OPTIMAL
              and rep["dominant_fraction"] >= 1 - 1e-6
              and g.passed
              and rep["growth"].min_ratio >= kappa)
        if not ok:
            failures.append((seed, run.termination, rep["dominant_fraction"], g, rep["growth"].min_ratio, kappa))
    assert not failures


def test_criterion_09_binariness(two_cell_run):
    confirmed = 0
    for seed in range(5):
        cfg = ex.resolve(ex.shipped_config("mineffort_gaussian"), seed=seed)
        run = ex.execute(cfg)
        rep = ex.mineffort_report(run.problem, run.iterate, cfg)
        if rep["e2"].confirmed:
            confirmed += 1
            u, p = rep["control"], rep["dual"]
            b = binariness_check(u, p, 1e-3, tol=1e-6)
            assert b.passed and b.checked > 0, seed
    assert confirmed >= 1
    u = two_cell_run.problem.control(two_cell_run.iterate)
    assert np.abs(u - np.array([1.5, -1.5])).max() <= 1e-8


def test_criterion_10_lifted_equivalence(shipped_runs):
    for name, run in shipped_runs.items():
        exact = [r.exact_objective for r in run.records]
        lifted = [r.objective for r in run.records]
        rep = verify_residual_dominance(exact, lifted, run.reference, tol=1e-12)
        assert rep.dominance and rep.equality, name
        assert verify_monotone(lifted, 1e-10) == verify_monotone(exact, 1e-10), name


def test_criterion_11_nondegeneracy(heat_run):
    rep = ex.heat_report(heat_run.problem, heat_run.iterate, heat_run.cfg)
    entries = rep["nondegeneracy"]
    assert len(entries) == 2
    for e in entries:
        assert "error" not in e, e
        assert e["report"].passed, e["position"]
    for e in entries:
        assert e["growth_passed"], f"growth margin {e['growth_margin']:.3e} at {e['position']}"


def csv_without(path, drop=("wall_ms",)):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    keep = [i for i, c in enumerate(rows[0]) if c not in drop]
    return [[r[i] for i in keep] for r in rows]


def test_criterion_12_determinism(shipped_runs, tmp_path):
    for name, run in shipped_runs.items():
        first, second = tmp_path / name / "a", tmp_path / name / "b"
        ex.write_run(run, first, plots=False)
        ex.run_config(run.cfg, second, plots=False)
        assert csv_without(first / "telemetry.csv") == csv_without(second / "telemetry.csv"), name
        for f in ("diagnostics.csv", "atoms.csv"):
            assert (first / f).read_bytes() == (second / f).read_bytes(), (name, f)
