"""Post-hoc checks on solver output.

Everything here consumes either an :class:`~atomic_fcgcg.core.ActiveIterate`
with its problem, or plain telemetry sequences, so archived runs can be
re-verified from their CSV files.  Iterates double as discrete measures
``mu = sum lam_i delta_{u_i}`` on the set of extremal points; for those,
``j(mu) = F(K mu) + ||mu||`` is the recorded ``objective`` while
``J(u) = F(K u) + G(u)`` is ``exact_objective``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, is_dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import ActiveIterate, Problem

EPS = np.finfo(float).eps


class InsufficientData(ValueError):
    pass


@dataclass
class MeasureView:
    support: list
    masses: np.ndarray
    total_mass: float

    @classmethod
    def from_iterate(cls, iterate: ActiveIterate) -> "MeasureView":
        keys = iterate.keys
        if len(set(keys)) != len(keys):
            raise ValueError("support keys must be distinct")
        w = np.asarray(iterate.weights, dtype=float)
        return cls(list(iterate.atoms), w.copy(), float(w.sum()))

    def image(self, m: int) -> np.ndarray:
        """``K mu = sum mass_i * K u_i``."""
        if not self.support:
            return np.zeros(m)
        return np.column_stack([a.forward_image for a in self.support]) @ self.masses


def measure_objective(problem: Problem, mv: MeasureView) -> float:
    return float(problem.loss_eval(mv.image(problem.observation_dim)) + mv.total_mass)


@dataclass
class FirstOrderReport:
    insertion_value: float
    pairing: float  # <p, u>
    gauge: float  # sum lam
    slack_max: float  # insertion_value - 1
    slack_pairing: float  # |<p, u> - sum lam| / (1 + sum lam)
    passed: bool


def verify_first_order(iterate: ActiveIterate, problem: Problem, tol: float) -> FirstOrderReport:
    """Check ``max_v <p, v> <= 1 + tol`` and ``<p, u> = G(u)`` up to ``tol (1 + G(u))``."""
    y = iterate.observation(problem.observation_dim)
    dual = problem.dual_from_gradient(problem.loss_grad(y))
    _, value = problem.insert(dual)
    pairing = float(sum(w * dual.value_at(a) for a, w in zip(iterate.atoms, iterate.weights)))
    gauge = iterate.total_mass
    s_pair = abs(pairing - gauge) / (1.0 + gauge)
    ok = value <= 1.0 + tol and s_pair <= tol
    return FirstOrderReport(float(value), pairing, gauge, float(value - 1.0), s_pair, bool(ok))


@dataclass
class PinningReport:
    max_deviation: float  # over atoms with positive weight
    max_excess: float  # max(<p, u_i> - 1) over zero-weight atoms
    passed: bool


def verify_active_pinning(dual, iterate: ActiveIterate, slack: float) -> PinningReport:
    """``|<p, u_i> - 1| <= slack`` on positive weights, ``<p, u_i> <= 1 + slack`` on zeros."""
    dev, exc = 0.0, -np.inf
    for a, w in zip(iterate.atoms, iterate.weights):
        v = dual.value_at(a)
        if w > 0:
            dev = max(dev, abs(v - 1.0))
        else:
            exc = max(exc, v - 1.0)
    ok = dev <= slack and exc <= slack
    return PinningReport(float(dev), float(exc), bool(ok))


def verify_monotone(values: Sequence[float], tol: float) -> bool:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("empty sequence")
    return bool(np.all(v[1:] <= v[:-1] + tol))


@dataclass
class DominanceReport:
    max_violation: float  # max r_J - r_j - 1e-12 (1 + r_j), <= 0 when dominance holds
    max_gap: float  # max |r_J - r_j| / (1 + r_j)
    dominance: bool
    equality: bool


def verify_residual_dominance(exact_objectives, measure_objectives, reference: float,
                              tol: float = 1e-12) -> DominanceReport:
    """``0 <= r_J(u_k) <= r_j(mu_k)`` and, for distinct atoms, equality within ``tol``."""
    rJ = np.asarray(exact_objectives, dtype=float) - reference
    rj = np.asarray(measure_objectives, dtype=float) - reference
    scale = 1.0 + np.abs(rj)
    viol = float(np.max(rJ - rj - tol * scale))
    gap = float(np.max(np.abs(rJ - rj) / scale))
    return DominanceReport(viol, gap, viol <= 0.0, gap <= tol)


@dataclass
class RateFit:
    zeta_hat: float
    window: tuple
    r_squared: float
    points: int


def noise_floor(reference: float) -> float:
    return 1e3 * EPS * (1.0 + abs(reference))


def fit_linear_rate(residuals: Sequence[float], tail_fraction: float = 0.5,
                    floor: Optional[float] = None) -> RateFit:
    """Least-squares fit of ``log r_k = a + k log zeta`` on the tail of the usable points.

    Points at or below ``floor`` (default ``1e3 eps``) are dropped first; the
    window is the last ``ceil(tail_fraction * usable)`` of them, at least 3.

    Raises
    ------
    InsufficientData
        Fewer than 3 usable points.
    """
    floor = noise_floor(0.0) if floor is None else floor
    r = np.asarray([np.nan if x is None else x for x in residuals], dtype=float)
    ks = np.flatnonzero(np.isfinite(r) & (r > floor))
    if ks.size < 3:
        raise InsufficientData(f"{ks.size} residuals above the noise floor {floor:.3e}; need 3")
    take = max(3, int(math.ceil(tail_fraction * ks.size)))
    ks = ks[-take:]
    x = ks.astype(float)
    y = np.log(r[ks])
    A = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(np.exp(coef[1])), (int(ks[0]), int(ks[-1])), r2, int(ks.size))


def sublinear_bound_check(residuals: Sequence[float]) -> float:
    """``c_hat = max_k (k + 1) r_k``, the smallest constant with ``r_k <= c / (k + 1)``."""
    r = np.asarray(residuals, dtype=float)
    if np.any(r < 0):
        raise ValueError("residuals must be nonnegative")
    if r.size == 0:
        return 0.0
    return float(np.max((np.arange(r.size) + 1.0) * r))


@dataclass
class SurrogateReport:
    ratios: list  # (k, ratio)
    tail_max_over_median: float
    bounded: bool


def surrogate_ratios(problem: Problem, trajectory, optimal_atoms, distance: Callable, radius: float,
                     reference: float, tail_fraction: float = 0.5, bound: float = 100.0,
                     floor: Optional[float] = None) -> SurrogateReport:
    """Track ``||K(mu_hat_k - mu_k)|| / sqrt(r_j(mu_k))`` along a run.

    ``trajectory`` holds ``(iterate, candidate_atom, objective)`` triples.
    ``mu_hat_k`` moves the mass that ``mu_k`` puts within ``radius`` (in the
    ``distance`` metric) of the optimal atom nearest to the candidate onto the
    candidate itself.  Only the tail boundedness ``max / median <= bound`` is
    asserted; the constant is not computable a priori.
    """
    floor = noise_floor(reference) if floor is None else floor
    out = []
    for k, (it, cand, obj) in enumerate(trajectory):
        r = obj - reference
        if not r > floor or not len(it):
            continue
        anchor = min(optimal_atoms, key=lambda a: distance(a, cand))
        diff = np.zeros(problem.observation_dim)
        for a, w in zip(it.atoms, it.weights):
            if distance(a, anchor) <= radius:
                diff += w * (cand.forward_image - a.forward_image)
        out.append((k, float(np.linalg.norm(diff) / np.sqrt(r))))
    if not out:
        return SurrogateReport([], float("nan"), True)
    vals = np.array([v for _, v in out])
    tail = vals[-max(1, int(math.ceil(tail_fraction * vals.size))):]
    med = float(np.median(tail))
    mx = float(tail.max())
    ratio = mx / med if med > 0 else (1.0 if mx == 0 else float("inf"))
    return SurrogateReport(out, ratio, bool(ratio <= bound))


def _plain(obj):
    if is_dataclass(obj):
        return {k: _plain(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def report_json(report: dict) -> str:
    """Serialize a nested report of dataclasses, arrays and scalars."""
    return json.dumps(_plain(report), indent=2, sort_keys=True)
