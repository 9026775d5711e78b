"""Fully-corrective generalized conditional gradient driver.

The iterate is kept as a conic combination ``u = sum_i lam_i u_i`` of extremal
points (atoms) of the regularizer's unit ball.  Each iteration computes the
dual ``p = -K_* grad F(K u)``, inserts the atom maximizing ``<p, v>``, re-solves
all weights over the enlarged active set and drops atoms with zero weight.
The driver never touches ``K`` directly: everything goes through a
:class:`Problem` and the cached forward images stored on each :class:`Atom`.
"""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Hashable, NamedTuple, Optional

import numpy as np

from .losses import Loss
from .subproblem import BudgetExceeded, CoefficientProblem, solve_weights


class SolverError(RuntimeError):
    """Base class for driver failures; carries the telemetry gathered so far."""

    def __init__(self, message, records=None, iterate=None):
        super().__init__(message)
        self.records = records if records is not None else []
        self.iterate = iterate


class SubproblemFailure(SolverError):
    pass


class NonFiniteObjective(SolverError, ArithmeticError):
    pass


class Termination(str, enum.Enum):
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    REINSERTION_OPTIMAL = "ReinsertionOptimal"


@dataclass(frozen=True, eq=False)
class Atom:
    """An extremal point together with its forward image ``K u``.

    ``key`` is the canonical identity used for duplicate detection; equal keys
    must describe the same extremal point.
    """

    payload: Any
    forward_image: np.ndarray
    key: Hashable


@dataclass
class ActiveIterate:
    atoms: list = field(default_factory=list)
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.atoms = list(self.atoms)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.weights.size != len(self.atoms):
            raise ValueError("one weight per atom required")

    def __len__(self):
        return len(self.atoms)

    @property
    def keys(self):
        return [a.key for a in self.atoms]

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def columns(self, m: int) -> np.ndarray:
        if not self.atoms:
            return np.zeros((m, 0))
        return np.column_stack([a.forward_image for a in self.atoms])

    def observation(self, m: int) -> np.ndarray:
        """``K u`` assembled from the cached forward images."""
        return self.columns(m) @ self.weights

    def index_of(self, key) -> int:
        for i, a in enumerate(self.atoms):
            if a.key == key:
                return i
        return -1

    def copy(self) -> "ActiveIterate":
        return ActiveIterate(list(self.atoms), self.weights.copy())


class Problem:
    """Problem oracle binding ``K``, ``K_*``, ``F`` and the insertion step.

    Subclasses provide ``observation_dim``, ``loss``, :meth:`atom_forward`,
    :meth:`atom_key`, :meth:`dual_from_gradient`, :meth:`insert` and
    :meth:`regularizer`.  Instances must be immutable after construction so
    that concurrent solves can share them.
    """

    observation_dim: int
    loss: Loss

    def loss_eval(self, y) -> float:
        return self.loss.value(y)

    def loss_grad(self, y) -> np.ndarray:
        return self.loss.grad(y)

    def atom_forward(self, payload) -> np.ndarray:
        raise NotImplementedError

    def atom_key(self, payload) -> Hashable:
        raise NotImplementedError

    def make_atom(self, payload) -> Atom:
        return Atom(payload, self.atom_forward(payload), self.atom_key(payload))

    def dual_from_gradient(self, grad):
        """Return a dual handle for ``p = -K_* grad``; it exposes ``value_at(atom)``."""
        raise NotImplementedError

    def insert(self, dual):
        """Return ``(atom, value)`` maximizing ``<p, v>`` over the extremal points."""
        raise NotImplementedError

    def regularizer(self, iterate: ActiveIterate) -> float:
        """Exact ``G(u)`` of the represented element (not the gauge ``sum lam``)."""
        raise NotImplementedError


@dataclass
class SolverConfig:
    max_iter: int = 100
    stop_tol: float = 1e-9
    prune_tol: float = 1e-12  # relative to max weight
    subproblem_tol: float = 1e-12  # scaled by (1 + J(u_k))
    reference_objective: Optional[float] = None
    rng_seed: int = 0

    def __post_init__(self):
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError("max_iter must be an integer >= 1")
        for name in ("stop_tol", "prune_tol", "subproblem_tol"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be strictly positive")
        self.max_iter = int(self.max_iter)


@dataclass
class IterationRecord:
    k: int
    objective: float
    residual: Optional[float]
    active_size: int
    insertion_value: float
    wall_ms: float
    # exact J(u_k) = F(K u_k) + G(u_k); `objective` uses the gauge sum(lam)
    exact_objective: float = float("nan")
    # max |<p_k, u_i> - 1| over atoms right after a weight solve, else nan
    pinning: float = float("nan")
    # absolute tolerance of the weight solve producing u_k, else nan
    subproblem_tol: float = float("nan")


@dataclass
class SolverState:
    iterate: ActiveIterate
    y: np.ndarray
    k: int = 0
    last_tol: float = float("nan")  # tolerance of the solve that produced the iterate
    tightened: bool = False


@dataclass
class StepResult:
    state: SolverState
    dual: Any
    candidate: Atom
    insertion_value: float
    pinning: float
    termination: Optional[Termination] = None


class SolveResult(NamedTuple):
    iterate: ActiveIterate
    records: list
    termination: Termination


def stop_check(insertion_value: float, k: int, stop_tol: float) -> bool:
    return k >= 1 and insertion_value <= 1.0 + stop_tol


def merge_or_insert(iterate: ActiveIterate, atom: Atom):
    """Append ``atom`` with weight 0 unless its key is already active.

    Returns ``(new_iterate, duplicate)``; on a duplicate the iterate is
    returned unchanged.
    """
    if iterate.index_of(atom.key) >= 0:
        return iterate, True
    return ActiveIterate(iterate.atoms + [atom], np.append(iterate.weights, 0.0)), False


def _checked(value, what, iterate=None):
    if not np.all(np.isfinite(value)):
        raise NonFiniteObjective(f"non-finite {what}", iterate=iterate)
    return value


def objective(iterate: ActiveIterate, problem: Problem) -> float:
    """``F(sum lam_i K u_i) + sum lam_i``; ``F(0)`` for the empty iterate."""
    if np.any(iterate.weights < 0):
        raise ValueError("weights must be nonnegative")
    y = iterate.observation(problem.observation_dim)
    return float(_checked(problem.loss_eval(y) + iterate.total_mass, "objective", iterate))


def exact_objective(iterate: ActiveIterate, problem: Problem) -> float:
    y = iterate.observation(problem.observation_dim)
    return float(problem.loss_eval(y) + problem.regularizer(iterate))


def initial_state(problem: Problem, warm_start: Optional[ActiveIterate] = None) -> SolverState:
    it = ActiveIterate() if warm_start is None else warm_start.copy()
    if len(set(it.keys)) != len(it):
        raise ValueError("warm start has duplicate atoms")
    if np.any(it.weights <= 0):
        raise ValueError("warm start weights must be positive")
    y = _checked(it.observation(problem.observation_dim), "observation", it)
    return SolverState(it, y)


def _probe(problem, state):
    grad = _checked(problem.loss_grad(state.y), "loss gradient", state.iterate)
    dual = problem.dual_from_gradient(grad)
    cand, value = problem.insert(dual)
    _checked(value, "insertion value", state.iterate)
    pin = float("nan")
    if np.isfinite(state.last_tol) and len(state.iterate):
        pin = max(abs(dual.value_at(a) - 1.0) for a in state.iterate.atoms)
    return dual, cand, float(value), pin


def _prune(iterate, prune_tol):
    w = iterate.weights
    if w.size == 0:
        return iterate
    keep = w > prune_tol * w.max() if w.max() > 0 else np.zeros(w.size, dtype=bool)
    return ActiveIterate([a for a, k in zip(iterate.atoms, keep) if k], w[keep])


def rounding_floor(problem: Problem, iterate: ActiveIterate) -> float:
    """Smallest KKT residual that double precision can certify for this active set.

    The shifted gradient ``g_i^T grad F + 1`` carries a rounding error of
    roughly ``eps * ||g_i|| * ||grad F||``; asking for less makes the inner
    solve fail on well-posed but badly scaled problems (small ``beta``).
    """
    if not len(iterate):
        return 0.0
    m = problem.observation_dim
    col = max(float(np.linalg.norm(a.forward_image)) for a in iterate.atoms)
    g0 = float(np.linalg.norm(problem.loss_grad(np.zeros(m))))
    return 2.0 * np.finfo(float).eps * col * (1.0 + g0)


def _solve_weights(problem, iterate, tol):
    m = problem.observation_dim
    cp = CoefficientProblem(iterate.columns(m), problem.loss)
    try:
        lam, _ = solve_weights(cp, iterate.weights, tol)
    except BudgetExceeded as exc:
        raise SubproblemFailure(str(exc), iterate=iterate) from exc
    return lam


def step(problem: Problem, state: SolverState, config: SolverConfig, probe=None) -> StepResult:
    """One pass of dual evaluation, insertion, weight solve and pruning.

    ``probe`` may carry a precomputed ``(dual, candidate, value, pinning)``
    for the current state.  The returned state is unchanged when the step
    terminates.
    """
    dual, cand, value, pin = probe if probe is not None else _probe(problem, state)
    if stop_check(value, state.k, config.stop_tol):
        return StepResult(state, dual, cand, value, pin, Termination.OPTIMAL)

    enlarged, duplicate = merge_or_insert(state.iterate, cand)
    J = objective(state.iterate, problem)
    tol = config.subproblem_tol * (1.0 + abs(J))
    if duplicate:
        if value <= 1.0 + config.stop_tol:
            return StepResult(state, dual, cand, value, pin, Termination.REINSERTION_OPTIMAL)
        if state.tightened:
            raise SubproblemFailure(
                f"active atom {cand.key!r} re-selected with value {value:.3e} after tightened re-solve",
                iterate=state.iterate,
            )
        # exact weights forbid re-selecting an active atom above 1: re-solve tighter once
        tol *= 0.01
    tol = max(tol, rounding_floor(problem, enlarged))
    lam = _solve_weights(problem, enlarged, tol)
    new = _prune(ActiveIterate(enlarged.atoms, lam), config.prune_tol)
    y = _checked(new.observation(problem.observation_dim), "observation", new)
    nxt = SolverState(new, y, state.k + 1, last_tol=tol, tightened=duplicate)
    if objective(new, problem) > J + tol:
        raise SubproblemFailure("weight solve increased the objective", iterate=new)
    return StepResult(nxt, dual, cand, value, pin, None)


def solve(
    problem: Problem,
    config: SolverConfig,
    warm_start: Optional[ActiveIterate] = None,
    callback: Optional[Callable[[StepResult], None]] = None,
) -> SolveResult:
    """Run FC-GCG until the stopping test fires or ``max_iter`` is reached.

    ``callback`` receives every :class:`StepResult`, including the final
    (terminating) one.
    """
    state = initial_state(problem, warm_start)
    records = []
    t0 = time.perf_counter()
    try:
        while True:
            wall = 1e3 * (time.perf_counter() - t0)
            J = objective(state.iterate, problem)
            probe = _probe(problem, state)
            rec = IterationRecord(
                k=state.k,
                objective=J,
                residual=None if config.reference_objective is None else J - config.reference_objective,
                active_size=len(state.iterate),
                insertion_value=probe[2],
                wall_ms=wall,
                exact_objective=exact_objective(state.iterate, problem),
                pinning=probe[3],
                subproblem_tol=state.last_tol,
            )
            records.append(rec)
            if state.k >= config.max_iter:
                if stop_check(probe[2], state.k, config.stop_tol):
                    reason = Termination.OPTIMAL
                else:
                    reason = Termination.MAX_ITER
                if callback is not None:
                    callback(StepResult(state, probe[0], probe[1], probe[2], probe[3], reason))
                return SolveResult(state.iterate, records, reason)
            res = step(problem, state, config, probe=probe)
            if callback is not None:
                callback(res)
            if res.termination is not None:
                return SolveResult(state.iterate, records, res.termination)
            state = res.state
    except SolverError as exc:
        exc.records = records
        if exc.iterate is None:
            exc.iterate = state.iterate
        raise


def with_reference(records, reference_objective: float):
    """Copy of ``records`` with residuals taken against ``reference_objective``."""
    return [replace(r, residual=r.objective - reference_objective) for r in records]
