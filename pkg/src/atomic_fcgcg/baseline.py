"""Plain generalized conditional gradient, the non-corrective reference method.

Each step moves towards a single scaled extremal point,
``u_{k+1} = (1 - s_k) u_k + s_k v_k`` with ``v_k = M0 * v_hat`` when the
insertion value reaches 1 and ``v_k = 0`` otherwise.  Nothing is ever
re-optimized or removed except by the uniform ``(1 - s_k)`` shrinkage, which is
what makes the method sublinear in practice.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import (
    ActiveIterate,
    IterationRecord,
    Problem,
    SolveResult,
    SolverError,
    SolverState,
    Termination,
    _checked,
    _probe,
    exact_objective,
    objective,
)

STEPSIZE_RULES = ("exact", "harmonic")


@dataclass
class BaselineConfig:
    M0: float
    stepsize_rule: str = "exact"
    max_iter: int = 100
    rng_seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.M0) and self.M0 > 0):
            raise ValueError("M0 must be positive")
        if self.stepsize_rule not in STEPSIZE_RULES:
            raise ValueError(f"stepsize_rule must be one of {STEPSIZE_RULES}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError("max_iter must be an integer >= 1")
        self.max_iter = int(self.max_iter)


def default_M0(problem: Problem) -> float:
    """``J(0) / beta`` for problems carrying a ``beta`` (or ``alpha``) weight, else ``J(0)``."""
    J0 = problem.loss_eval(np.zeros(problem.observation_dim))
    weight = getattr(problem, "beta", None) or getattr(problem, "alpha", None) or 1.0
    return float(J0 / weight)


def exact_linesearch(problem: Problem, y, mass: float, direction_image, direction_mass: float):
    """Minimize ``s -> F((1-s) y + s Kv) + (1-s) mass + s direction_mass`` over ``[0, 1]``.

    ``direction_image`` is ``K v_k`` and ``direction_mass`` its gauge
    (``M0`` or 0).  Needs a squared loss.

    Returns
    -------
    s : float
    degenerate : bool
        True when the quadratic has zero curvature (``K v_k = y``); the
        endpoint with the smaller objective is returned, ``s = 0`` on ties.
    """
    if not problem.loss.is_quadratic:
        raise ValueError("exact line search needs a squared loss")
    y = np.asarray(y, dtype=float)
    d = np.asarray(direction_image, dtype=float) - y
    slope = float(problem.loss_grad(y) @ d) + direction_mass - mass
    curv = float(d @ d)
    if curv <= 1e-300:
        phi0 = problem.loss_eval(y) + mass
        phi1 = problem.loss_eval(y + d) + direction_mass
        return (1.0 if phi1 < phi0 else 0.0), True
    return float(np.clip(-slope / curv, 0.0, 1.0)), False


def harmonic_step(k: int) -> float:
    return 2.0 / (k + 2.0)


def gcg_step(problem: Problem, state: SolverState, config: BaselineConfig, probe=None):
    """One convex-combination step; returns ``(state', s_k)``."""
    dual, cand, value, _ = probe if probe is not None else _probe(problem, state)
    it = state.iterate
    m = problem.observation_dim
    active = value >= 1.0
    target = config.M0 * cand.forward_image if active else np.zeros(m)
    target_mass = config.M0 if active else 0.0
    if config.stepsize_rule == "exact":
        s, _ = exact_linesearch(problem, state.y, it.total_mass, target, target_mass)
    else:
        s = harmonic_step(state.k)
    weights = (1.0 - s) * it.weights
    atoms = list(it.atoms)
    if active and s > 0:
        j = it.index_of(cand.key)
        if j >= 0:
            weights[j] += s * config.M0
        else:
            atoms.append(cand)
            weights = np.append(weights, s * config.M0)
    keep = weights > 0
    new = ActiveIterate([a for a, kk in zip(atoms, keep) if kk], weights[keep])
    y = _checked((1.0 - s) * state.y + s * target, "observation", new)
    return SolverState(new, y, state.k + 1), s


def solve_gcg(problem: Problem, config: BaselineConfig, callback: Optional[Callable] = None) -> SolveResult:
    """Run ``max_iter`` GCG steps from ``u_0 = 0``; telemetry matches :func:`core.solve`.

    The observation is updated by the same convex combination as the
    weights, so no operator is applied to the whole iterate.
    """
    state = SolverState(ActiveIterate(), np.zeros(problem.observation_dim))
    records = []
    t0 = time.perf_counter()
    try:
        while True:
            wall = 1e3 * (time.perf_counter() - t0)
            probe = _probe(problem, state)
            J = objective(state.iterate, problem)
            records.append(IterationRecord(
                k=state.k,
                objective=J,
                residual=None,
                active_size=len(state.iterate),
                insertion_value=probe[2],
                wall_ms=wall,
                exact_objective=exact_objective(state.iterate, problem),
            ))
            if state.k >= config.max_iter:
                return SolveResult(state.iterate, records, Termination.MAX_ITER)
            state, s = gcg_step(problem, state, config, probe=probe)
            if callback is not None:
                callback(state, s)
    except SolverError as exc:
        exc.records = records
        raise
