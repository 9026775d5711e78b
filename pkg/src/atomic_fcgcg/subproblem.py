"""Coefficient subproblem ``min_{lam >= 0} F(G lam) + sum(lam)``.

``G`` collects the forward images of the active atoms column-wise.  For a
squared loss the problem is a nonnegative least-squares problem with an extra
unit linear cost, solved here by a Lawson-Hanson style active-set method that
terminates finitely.  Any other smooth loss falls back to accelerated projected
gradient with function-value restart.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .losses import Loss

_EPS = np.finfo(float).eps


class BudgetExceeded(RuntimeError):
    """Inner iteration cap reached before the KKT tolerance was certified."""

    def __init__(self, message, weights=None, report=None):
        super().__init__(message)
        self.weights = weights
        self.report = report


@dataclass
class CoefficientProblem:
    columns: np.ndarray  # (m, N), one forward image per active atom
    loss: Loss

    def __post_init__(self):
        cols = np.asarray(self.columns, dtype=float)
        if cols.ndim == 1:
            cols = cols[:, None]
        if cols.ndim != 2 or cols.shape[1] < 1:
            raise ValueError("need at least one column")
        if not np.all(np.isfinite(cols)):
            raise ValueError("columns must be finite")
        self.columns = cols

    @property
    def size(self) -> int:
        return self.columns.shape[1]

    def objective(self, lam) -> float:
        lam = np.asarray(lam, dtype=float)
        return self.loss.value(self.columns @ lam) + float(lam.sum())

    def shifted_gradient(self, lam) -> np.ndarray:
        """Gradient of the smooth part plus the unit cost, ``G^T grad F(G lam) + 1``."""
        lam = np.asarray(lam, dtype=float)
        return self.columns.T @ self.loss.grad(self.columns @ lam) + 1.0


@dataclass
class KktReport:
    residual: float
    active_mask: np.ndarray
    inner_iters: int


def kkt_residual(lam, cp: CoefficientProblem) -> float:
    """Largest violation of the KKT system of the coefficient problem.

    Coordinates with ``lam_i > 0`` contribute ``|g_i|``, coordinates at the
    bound contribute ``max(0, -g_i)``, where ``g`` is the shifted gradient.
    """
    lam = np.asarray(lam, dtype=float)
    g = cp.shifted_gradient(lam)
    pos = lam > 0
    res = 0.0
    if pos.any():
        res = float(np.max(np.abs(g[pos])))
    if (~pos).any():
        res = max(res, float(np.max(np.maximum(0.0, -g[~pos]))))
    return res


def _face_minimizer(G, b, passive):
    """Minimize ``0.5||G_P x - b||^2 + sum(x)`` over the passive coordinates.

    Solved through a thin QR factorization of ``G_P`` followed by two rounds of
    iterative refinement on the directly evaluated gradient; the normal
    equations are never formed.  Returns ``None`` if ``G_P`` is rank deficient.
    """
    z = np.zeros(G.shape[1])
    idx = np.flatnonzero(passive)
    if idx.size == 0:
        return z
    if idx.size > G.shape[0]:
        return None
    Gp = G[:, idx]
    Q, R = np.linalg.qr(Gp)
    d = np.abs(np.diag(R))
    if d.min() <= 1e-12 * d.max():
        return None
    ones = np.ones(idx.size)
    x = solve_triangular(R, Q.T @ b - solve_triangular(R, ones, trans="T"))
    for _ in range(2):
        g = Gp.T @ (Gp @ x - b) + 1.0
        x = x - solve_triangular(R, solve_triangular(R, g, trans="T"))
    z[idx] = x
    return z


def _dependence(G, passive, j):
    """Coefficients ``c`` with ``G_P c = g_j`` if column j lies in span(G_P), else None."""
    idx = np.flatnonzero(passive)
    if idx.size == 0:
        return None
    gj = G[:, j]
    c, *_ = np.linalg.lstsq(G[:, idx], gj, rcond=None)
    if np.linalg.norm(G[:, idx] @ c - gj) > 1e-10 * max(np.linalg.norm(gj), 1e-300):
        return None
    out = np.zeros(G.shape[1])
    out[idx] = c
    return out


def _active_set(cp, lam0, tol, max_pivots):
    G = cp.columns
    b = cp.loss.target
    N = G.shape[1]
    lam = np.maximum(np.asarray(lam0, dtype=float), 0.0)
    passive = lam > 0
    pivots = 0

    def settle(lam, passive, pivots):
        # move from the feasible point lam towards the face minimizer, dropping
        # coordinates that hit the bound
        z = _face_minimizer(G, b, passive)
        while z is not None and np.any(z[passive] <= 0):
            pivots += 1
            if pivots > max_pivots:
                raise BudgetExceeded(f"active-set pivot budget {max_pivots} exhausted", lam)
            blocking = np.flatnonzero(passive & (z <= 0))
            ratios = lam[blocking] / (lam[blocking] - z[blocking])
            alpha = float(np.min(ratios))
            lam = lam + alpha * (z - lam)
            passive[blocking[ratios <= alpha]] = False
            passive &= lam > 0
            lam[~passive] = 0.0
            z = _face_minimizer(G, b, passive)
        if z is not None:
            lam = np.where(passive, z, 0.0)
        return lam, passive, z is not None, pivots

    if passive.any():
        lam, passive, ok, pivots = settle(lam, passive.copy(), pivots)
        if not ok:
            # degenerate warm start; the cold start reaches the global minimum anyway
            lam, passive = np.zeros(N), np.zeros(N, dtype=bool)

    stalled = np.zeros(N, dtype=bool)
    while True:
        g = cp.shifted_gradient(lam)
        violation = np.where(passive | stalled, -np.inf, -g)
        j = int(np.argmax(violation))
        if violation[j] <= tol:
            break
        pivots += 1
        if pivots > max_pivots:
            raise BudgetExceeded(f"active-set pivot budget {max_pivots} exhausted", lam)
        c = _dependence(G, passive, j)
        if c is not None:
            # g_j = G_P c: moving along e_j - c keeps G lam fixed and lowers
            # sum(lam) at rate g_j < 0 until a passive weight vanishes
            shrinking = np.flatnonzero(passive & (c > 0))
            if shrinking.size == 0:
                stalled[j] = True
                continue
            ratios = lam[shrinking] / c[shrinking]
            t = float(np.min(ratios))
            lam = lam - t * c
            lam[j] = t
            passive = passive.copy()
            passive[shrinking[ratios <= t]] = False
            passive[j] = True
            passive &= lam > 0
            lam[~passive] = 0.0
        else:
            trial = passive.copy()
            trial[j] = True
            z = _face_minimizer(G, b, trial)
            if z is None or z[j] <= 0:
                # entering coordinate rejected by round-off; do not retry it
                stalled[j] = True
                continue
            passive = trial
        lam, passive, ok, pivots = settle(lam, passive, pivots)
        if not ok:
            stalled[j] = True
            continue
        stalled[:] = False
    return lam, pivots


def _projected_gradient(cp, lam0, tol, max_iter):
    G = cp.columns
    phi = cp.objective
    x = np.maximum(np.asarray(lam0, dtype=float), 0.0)
    fx = phi(x)
    y, t = x.copy(), 1.0
    lip = max(np.linalg.norm(G, 2) ** 2, 1e-12)
    for it in range(1, max_iter + 1):
        g = cp.shifted_gradient(y)
        fy = phi(y)
        while True:
            x_new = np.maximum(y - g / lip, 0.0)
            step = x_new - y
            f_new = phi(x_new)
            if f_new <= fy + g @ step + 0.5 * lip * (step @ step) + 1e-15 * abs(fy):
                break
            lip *= 2.0
        if f_new > fx + 4.0 * _EPS * max(1.0, abs(fx)):
            # function-value restart keeps the sequence monotone; increases at the
            # rounding level are accepted, otherwise the iteration stalls once the
            # decrease per step drops below eps * F
            y, t = x.copy(), 1.0
            continue
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, fx, t = x_new, f_new, t_new
        if kkt_residual(x, cp) <= tol:
            return x, it
    raise BudgetExceeded(f"projected gradient did not reach tol={tol:g} in {max_iter} iterations", x)


def solve_weights(cp: CoefficientProblem, lam_init=None, tol: float = 1e-12):
    """Solve the coefficient problem to a certified KKT residual.

    Parameters
    ----------
    cp : CoefficientProblem
    lam_init : array_like, optional
        Nonnegative warm start with one entry per column (zeros if omitted).
    tol : float
        Bound on :func:`kkt_residual` at the returned point.

    Returns
    -------
    lam : ndarray
    report : KktReport

    Raises
    ------
    BudgetExceeded
        If the pivot cap (50 N) or gradient-iteration cap (10 000) is hit, or
        the certified residual stays above ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    N = cp.size
    lam0 = np.zeros(N) if lam_init is None else np.asarray(lam_init, dtype=float)
    if lam0.shape != (N,):
        raise ValueError(f"lam_init has shape {lam0.shape}, expected ({N},)")
    if cp.loss.is_quadratic:
        lam, iters = _active_set(cp, lam0, tol, max_pivots=50 * N)
    else:
        lam, iters = _projected_gradient(cp, lam0, tol, max_iter=10_000)
    res = kkt_residual(lam, cp)
    report = KktReport(residual=res, active_mask=lam > 0, inner_iters=iters)
    if res > tol:
        raise BudgetExceeded(f"KKT residual {res:.3e} above tol {tol:.3e}", lam, report)
    return lam, report


def brute_force_qp(cp: CoefficientProblem, feas_tol: float = 1e-10):
    """Exact minimizer of a squared-loss coefficient problem by enumeration.

    Every support set ``S`` is tried: the reduced normal equations
    ``G_S^T G_S x = G_S^T b - 1`` are solved (minimum-norm solution when
    singular), and the candidate is kept if it is primal and dual feasible.
    The feasible candidate with the smallest objective is returned.

    Returns ``(lam, rank_deficient)`` where the flag records whether any
    reduced system was singular.  Intended as a test oracle, ``N <= 12``.
    """
    if not cp.loss.is_quadratic:
        raise ValueError("brute force oracle needs a squared loss")
    G = cp.columns
    b = cp.loss.target
    N = G.shape[1]
    if N > 12:
        raise ValueError("brute force oracle limited to N <= 12")
    GtG = G.T @ G
    Gtb = G.T @ b
    scale = 1.0 + np.abs(Gtb).max()
    best, best_val, rank_deficient = np.zeros(N), np.inf, False
    for r in range(N + 1):
        for S in itertools.combinations(range(N), r):
            S = list(S)
            lam = np.zeros(N)
            if S:
                A = GtG[np.ix_(S, S)]
                rhs = Gtb[S] - 1.0
                if np.linalg.matrix_rank(G[:, S]) < len(S):
                    rank_deficient = True
                    lam[S] = np.linalg.pinv(A) @ rhs
                else:
                    lam[S] = np.linalg.solve(A, rhs)
                if np.any(lam[S] < -feas_tol * scale):
                    continue
                lam[S] = np.maximum(lam[S], 0.0)
            g = GtG @ lam - Gtb + 1.0
            off = np.setdiff1d(np.arange(N), S)
            if off.size and np.any(g[off] < -feas_tol * scale):
                continue
            val = cp.objective(lam)
            if val < best_val:
                best, best_val = lam, val
    return best, rank_deficient
