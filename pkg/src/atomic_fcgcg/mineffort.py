"""Minimum-effort problems: ``min 0.5 ||K u - y_d||^2 + alpha ||u||_inf``.

``u`` is piecewise constant on ``n`` cells and the pairing between controls
and duals is the cell-measure weighted sum ``<p, u> = sum_i p_i u_i |c_i|``.
The unit ball of ``alpha ||.||_inf`` has the sign patterns ``s / alpha``,
``s in {-1, +1}^n``, as extremal points, so insertion amounts to taking the
sign of the dual.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ActiveIterate, Problem
from .losses import SquaredLoss


@dataclass
class EffortInstance:
    K: np.ndarray  # (m, n)
    alpha: float
    y_d: np.ndarray
    cell_measure: np.ndarray = None  # defaults to unit cells

    def __post_init__(self):
        self.K = np.atleast_2d(np.asarray(self.K, dtype=float))
        if not np.all(np.isfinite(self.K)):
            raise ValueError("K must be finite")
        m, n = self.K.shape
        if self.cell_measure is None:
            self.cell_measure = np.ones(n)
        self.cell_measure = np.asarray(self.cell_measure, dtype=float)
        if self.cell_measure.shape != (n,) or not np.all(self.cell_measure > 0):
            raise ValueError("cell_measure must be positive, one entry per cell")
        self.y_d = np.asarray(self.y_d, dtype=float)
        if self.y_d.shape != (m,):
            raise ValueError("y_d must have one entry per row of K")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    @property
    def cells(self) -> int:
        return self.K.shape[1]


def make_operator(kind: str, n: int, m: int = None, seed: int = 0, width: float = 0.05) -> np.ndarray:
    """Forward operators for synthetic instances.

    ``identity`` (m = n), ``gaussian`` (iid ``N(0, 1/m)`` entries) or
    ``smoothing`` (1-D Gaussian convolution on the cell midpoints of ``(0, 1)``
    scaled by the cell width so it approximates an integral operator).
    """
    if kind == "identity":
        return np.eye(n)
    if kind == "gaussian":
        m = n if m is None else m
        rng = np.random.default_rng(seed)
        return rng.standard_normal((m, n)) / np.sqrt(m)
    if kind == "smoothing":
        m = n if m is None else m
        xs = (np.arange(n) + 0.5) / n
        ys = (np.arange(m) + 0.5) / m
        d = ys[:, None] - xs[None, :]
        return np.exp(-0.5 * (d / width) ** 2) / (np.sqrt(2 * np.pi) * width) / n
    raise ValueError(f"unknown operator kind {kind!r}")


def two_cell_instance() -> EffortInstance:
    """``K = I``, ``y_d = (2, -2)``, ``alpha = 1``: solution ``(1.5, -1.5)``."""
    return EffortInstance(np.eye(2), 1.0, np.array([2.0, -2.0]))


def synthetic_instance(n: int, kind: str = "smoothing", alpha: float = 1e-2, seed: int = 0,
                       m: int = None, noise_rel: float = 0.0) -> EffortInstance:
    """Data generated by a bang-bang control ``sign(sin(3 pi x))`` on ``n`` uniform cells."""
    K = make_operator(kind, n, m, seed)
    xs = (np.arange(n) + 0.5) / n
    u_true = np.where(np.sin(3 * np.pi * xs) >= 0, 1.0, -1.0)
    y = K @ u_true
    if noise_rel > 0:
        rng = np.random.default_rng(seed + 1)
        zeta = rng.standard_normal(y.size)
        y = y + zeta * (noise_rel * np.linalg.norm(y) / np.linalg.norm(zeta))
    return EffortInstance(K, alpha, y, np.full(n, 1.0 / n))


@dataclass(frozen=True, eq=False)
class SignAtom:
    pattern: np.ndarray  # entries +-1
    scale: float  # 1 / alpha

    def vector(self) -> np.ndarray:
        return self.scale * self.pattern


def sign_pattern(p) -> np.ndarray:
    """``sign(p)`` with ``sign(0) = +1``."""
    return np.where(np.asarray(p) >= 0, 1.0, -1.0)


@dataclass
class EffortDual:
    p: np.ndarray
    cell_measure: np.ndarray

    def value_at(self, atom) -> float:
        a = atom.payload
        return a.scale * float(np.sum(a.pattern * self.p * self.cell_measure))


class EffortProblem(Problem):
    def __init__(self, instance: EffortInstance):
        self.instance = instance
        self.alpha = instance.alpha
        self.observation_dim = instance.K.shape[0]
        self.loss = SquaredLoss(instance.y_d)

    def atom(self, pattern) -> SignAtom:
        s = sign_pattern(pattern)
        s.setflags(write=False)
        return SignAtom(s, 1.0 / self.alpha)

    def atom_forward(self, payload: SignAtom) -> np.ndarray:
        return self.instance.K @ payload.vector()

    def atom_key(self, payload: SignAtom):
        return np.packbits(payload.pattern > 0).tobytes() + payload.pattern.size.to_bytes(4, "little")

    def dual_from_gradient(self, grad) -> EffortDual:
        # K_* y = K^T y / |c| for the weighted pairing
        p = -(self.instance.K.T @ np.asarray(grad, dtype=float)) / self.instance.cell_measure
        return EffortDual(p, self.instance.cell_measure)

    def insert(self, dual: EffortDual):
        atom = self.make_atom(self.atom(dual.p))
        value = float(np.sum(np.abs(dual.p) * dual.cell_measure)) / self.alpha
        return atom, value

    atom_header = ("weight", "pattern")

    def atom_rows(self, iterate: ActiveIterate):
        return [(float(w), "".join("+" if v > 0 else "-" for v in a.payload.pattern))
                for a, w in zip(iterate.atoms, iterate.weights)]

    def iterate_from_rows(self, rows) -> ActiveIterate:
        atoms = [self.make_atom(self.atom(np.array([1.0 if c == "+" else -1.0 for c in r[1]]))) for r in rows]
        return ActiveIterate(atoms, [float(r[0]) for r in rows])

    def control(self, iterate: ActiveIterate) -> np.ndarray:
        u = np.zeros(self.instance.cells)
        for a, w in zip(iterate.atoms, iterate.weights):
            u += w * a.payload.vector()
        return u

    def regularizer(self, iterate: ActiveIterate) -> float:
        u = self.control(iterate)
        return self.alpha * float(np.abs(u).max()) if u.size else 0.0


@dataclass
class BinarinessReport:
    level: float  # max |u|
    violations: int
    checked: int
    passed: bool


def binariness_check(u, p, eps: float, tol: float = 1e-6) -> BinarinessReport:
    """``|u_i| = max|u|`` with ``sign(u_i) = sign(p_i)`` wherever ``|p_i| > eps``."""
    u = np.asarray(u, dtype=float)
    p = np.asarray(p, dtype=float)
    level = float(np.abs(u).max()) if u.size else 0.0
    mask = np.abs(p) > eps
    mag_ok = np.abs(np.abs(u[mask]) - level) <= tol * level
    sign_ok = np.sign(u[mask]) == np.sign(p[mask])
    bad = int(np.count_nonzero(~(mag_ok & sign_ok)))
    return BinarinessReport(level, bad, int(mask.sum()), bad == 0)


def smallvalue_measure(p, eps: float, cell_measure=None) -> float:
    """Measure of the cells where ``|p| <= eps``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    p = np.asarray(p, dtype=float)
    w = np.ones(p.size) if cell_measure is None else np.asarray(cell_measure, dtype=float)
    return float(w[np.abs(p) <= eps].sum())


def smallvalue_sweep(p, eps_values, cell_measure=None):
    """``(eps, measure, measure / eps)`` rows and the empirical constant ``max measure / eps``."""
    rows = [(e, smallvalue_measure(p, e, cell_measure)) for e in eps_values]
    rows = [(e, mu, mu / e) for e, mu in rows]
    return rows, max(r[2] for r in rows)


@dataclass
class E2Sweep:
    rows: list  # (eps, measure, excess measure / relative eps)
    zero_cells: int  # cells where p vanishes to round-off
    zero_measure: float
    C_hat: float
    confirmed: bool


def e2_sweep(p, cell_measure=None, rel_eps=(1e-1, 3e-2, 1e-2, 3e-3, 1e-3),
             max_zero_cells: int = None, C_max: float = 10.0, zero_tol: float = 1e-9) -> E2Sweep:
    """Empirical check of ``|{|p| <= eps}| <= C eps`` on a discretized domain.

    Thresholds are taken relative to ``||p||_inf`` so ``C_hat`` is scale free.
    Cells where ``p`` vanishes to round-off are the non-saturated cells of a
    discrete solution; their count is bounded by the number of observations
    and their measure shrinks with the mesh, so they are reported separately
    (``zero_cells``) and subtracted before estimating ``C_hat``.  The sweep
    confirms the assumption iff ``C_hat <= C_max * |Omega|`` and, when
    ``max_zero_cells`` is given, ``zero_cells <= max_zero_cells``.
    """
    p = np.asarray(p, dtype=float)
    w = np.ones(p.size) if cell_measure is None else np.asarray(cell_measure, dtype=float)
    pm = float(np.abs(p).max()) if p.size else 0.0
    if pm == 0.0:
        return E2Sweep([], p.size, float(w.sum()), float("inf"), False)
    zero = np.abs(p) <= zero_tol * pm
    mu0 = float(w[zero].sum())
    rows = []
    for r in rel_eps:
        mu = smallvalue_measure(p, r * pm, w)
        rows.append((r * pm, mu, (mu - mu0) / r))
    C_hat = max(row[2] for row in rows)
    ok = C_hat <= C_max * float(w.sum())
    if max_zero_cells is not None:
        ok = ok and int(zero.sum()) <= max_zero_cells
    return E2Sweep(rows, int(zero.sum()), mu0, float(C_hat), bool(ok))
