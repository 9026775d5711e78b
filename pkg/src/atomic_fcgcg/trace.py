"""Trace-regularized recovery of a positive semidefinite matrix.

``min_U 0.5 ||K U - y_d||^2 + beta tr(U)`` over symmetric PSD ``U`` of size
``n``, with linear measurements ``(K U)_j = tr(A_j U)`` against symmetric
sensing matrices.  Extremal points of the regularizer's unit ball are the
rank-one matrices ``h h^T / beta`` with ``||h|| = 1``; the insertion step is a
leading-eigenvector computation for the dual matrix ``P = -sum_j (grad F)_j A_j``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ActiveIterate, Problem
from .eigen import EigenFailure, leading_eigenpairs
from .losses import SquaredLoss

__all__ = [
    "EigenFailure",
    "GapReport",
    "GrowthReport",
    "RankOneAtom",
    "TraceDual",
    "TraceInstance",
    "TraceProblem",
    "canonical_sign",
    "growth_probe",
    "planted_instance",
    "spectral_gap_check",
]


def canonical_sign(h) -> np.ndarray:
    """Flip ``h`` so that its first component above round-off is positive."""
    h = np.asarray(h, dtype=float)
    nz = np.flatnonzero(np.abs(h) > 1e-12 * max(np.abs(h).max(), 1e-300))
    if nz.size and h[nz[0]] < 0:
        return -h
    return h


@dataclass(frozen=True, eq=False)
class RankOneAtom:
    h: np.ndarray
    scale: float  # 1 / beta

    def matrix(self) -> np.ndarray:
        return self.scale * np.outer(self.h, self.h)


@dataclass
class TraceInstance:
    sensors: np.ndarray  # (m, n, n), symmetric slices
    beta: float
    y_d: np.ndarray
    truth: np.ndarray = None  # planted matrix if synthetic

    def __post_init__(self):
        self.sensors = np.asarray(self.sensors, dtype=float)
        if self.sensors.ndim != 3 or self.sensors.shape[1] != self.sensors.shape[2]:
            raise ValueError("sensors must have shape (m, n, n)")
        if self.sensors.shape[0] < 1:
            raise ValueError("need at least one sensor")
        asym = np.abs(self.sensors - self.sensors.transpose(0, 2, 1)).max()
        if asym > 1e-14 * max(1.0, np.abs(self.sensors).max()):
            raise ValueError("sensing matrices must be symmetric")
        self.y_d = np.asarray(self.y_d, dtype=float)
        if self.y_d.shape != (self.sensors.shape[0],):
            raise ValueError("y_d must have one entry per sensor")
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    @property
    def n(self) -> int:
        return self.sensors.shape[1]

    @property
    def m(self) -> int:
        return self.sensors.shape[0]

    def measure(self, U) -> np.ndarray:
        return np.einsum("jab,ab->j", self.sensors, np.asarray(U, dtype=float))

    def adjoint(self, y) -> np.ndarray:
        return np.einsum("j,jab->ab", np.asarray(y, dtype=float), self.sensors)


def planted_instance(n: int, m: int, seed: int, beta: float, ensemble: str = "gaussian",
                     amplitude: float = 1.0, noise_rel: float = 0.0) -> TraceInstance:
    """Random sensors and data generated by a planted rank-one ``amplitude * a a^T``.

    ``ensemble="gaussian"`` draws ``A_j = (G + G^T) / sqrt(2 m)``;
    ``ensemble="rank_one"`` draws ``A_j = b_j b_j^T / sqrt(m)`` (phase-retrieval
    style quadratic measurements).
    """
    rng = np.random.default_rng(seed)
    if ensemble == "gaussian":
        G = rng.standard_normal((m, n, n))
        sensors = (G + G.transpose(0, 2, 1)) / np.sqrt(2.0 * m)
    elif ensemble == "rank_one":
        B = rng.standard_normal((m, n))
        sensors = np.einsum("ja,jb->jab", B, B) / np.sqrt(m)
    else:
        raise ValueError(f"unknown ensemble {ensemble!r}")
    a = rng.standard_normal(n)
    a /= np.linalg.norm(a)
    truth = amplitude * np.outer(a, a)
    y = np.einsum("jab,ab->j", sensors, truth)
    if noise_rel > 0:
        zeta = rng.standard_normal(m)
        y = y + zeta * (noise_rel * np.linalg.norm(y) / np.linalg.norm(zeta))
    return TraceInstance(sensors, beta, y, truth)


@dataclass
class TraceDual:
    P: np.ndarray
    beta: float

    def value_at(self, atom) -> float:
        h = atom.payload.h
        return atom.payload.scale * float(h @ self.P @ h)


class TraceProblem(Problem):
    def __init__(self, instance: TraceInstance):
        self.instance = instance
        self.beta = instance.beta
        self.observation_dim = instance.m
        self.loss = SquaredLoss(instance.y_d)

    def atom(self, h) -> RankOneAtom:
        h = np.asarray(h, dtype=float)
        nrm = np.linalg.norm(h)
        if not nrm > 0:
            raise ValueError("h must be nonzero")
        h = canonical_sign(h / nrm)
        h.setflags(write=False)
        return RankOneAtom(h, 1.0 / self.beta)

    def atom_forward(self, payload: RankOneAtom) -> np.ndarray:
        h = payload.h
        return payload.scale * np.einsum("jab,a,b->j", self.instance.sensors, h, h)

    def atom_key(self, payload: RankOneAtom):
        # h h^T = (-h)(-h)^T: the canonical sign is already applied
        return tuple(np.round(payload.h, 10) + 0.0)

    def dual_matrix(self, grad) -> np.ndarray:
        P = -self.instance.adjoint(grad)
        return 0.5 * (P + P.T)

    def dual_from_gradient(self, grad) -> TraceDual:
        return TraceDual(self.dual_matrix(grad), self.beta)

    def insert(self, dual: TraceDual):
        if not np.any(dual.P):
            h = np.zeros(self.instance.n)
            h[0] = 1.0
            return self.make_atom(self.atom(h)), 0.0
        vals, vecs = leading_eigenpairs(dual.P, 1)
        atom = self.make_atom(self.atom(vecs[:, 0]))
        return atom, float(vals[0]) / self.beta

    def matrix(self, iterate: ActiveIterate) -> np.ndarray:
        n = self.instance.n
        U = np.zeros((n, n))
        for a, w in zip(iterate.atoms, iterate.weights):
            U += w * a.payload.matrix()
        return U

    def regularizer(self, iterate: ActiveIterate) -> float:
        return self.beta * float(np.trace(self.matrix(iterate)))

    @property
    def atom_header(self):
        return ("weight",) + tuple(f"h{i}" for i in range(self.instance.n))

    def atom_rows(self, iterate: ActiveIterate):
        return [(float(w),) + tuple(float(x) for x in a.payload.h) for a, w in zip(iterate.atoms, iterate.weights)]

    def iterate_from_rows(self, rows) -> ActiveIterate:
        atoms = [self.make_atom(self.atom(np.array([float(x) for x in r[1:]]))) for r in rows]
        return ActiveIterate(atoms, [float(r[0]) for r in rows])

    def compress(self, iterate: ActiveIterate, rel_tol: float = 1e-12) -> ActiveIterate:
        """Re-express ``U`` in its own eigenbasis.

        Nearly parallel atoms accumulated by the iteration collapse into the
        eigenvectors of ``U``; since ``tr U`` and ``U`` itself are unchanged,
        so are the objective and the gauge.  Eigenvalues below
        ``rel_tol * max`` are dropped.
        """
        U = self.matrix(iterate)
        if not len(iterate):
            return iterate.copy()
        vals, vecs = leading_eigenpairs(U, self.instance.n)
        keep = vals > rel_tol * max(vals[0], 0.0)
        atoms = [self.make_atom(self.atom(vecs[:, i])) for i in np.flatnonzero(keep)]
        return ActiveIterate(atoms, self.beta * vals[keep])


@dataclass
class GapReport:
    sigma1: float
    sigma2: float
    passed: bool


def spectral_gap_check(P, beta: float, tol: float = 1e-6, gap_min: float = 1e-8) -> GapReport:
    """Report the two largest eigenvalues of ``P``.

    Passes iff ``|sigma1 - beta| <= tol * beta`` and ``sigma1 - sigma2 >= gap_min``.
    """
    P = np.asarray(P, dtype=float)
    if P.shape[0] == 1:
        s1, s2 = float(P[0, 0]), -np.inf
    else:
        vals, _ = leading_eigenpairs(P, 2)
        s1, s2 = float(vals[0]), float(vals[1])
    ok = abs(s1 - beta) <= tol * beta and s1 - s2 >= gap_min
    return GapReport(s1, s2, bool(ok))


@dataclass
class GrowthReport:
    min_ratio: float  # min (1 - <P, U>) / ||U - U1||_HS^2
    max_lipschitz: float  # max ||K (U - U1)|| / ||U - U1||_HS
    samples: int
    passed: bool


def growth_probe(P, h1, beta: float, samples: int = 1000, seed: int = 0,
                 instance: TraceInstance = None, kappa_min: float = 0.0) -> GrowthReport:
    """Sample the quadratic growth of ``1 - <P, U>`` around ``U1 = h1 h1^T / beta``.

    Samples are ``U = h h^T / beta`` with ``h`` uniform on the sphere.  The
    Lipschitz ratio is computed only when ``instance`` is given.
    """
    P = np.asarray(P, dtype=float)
    h1 = np.asarray(h1, dtype=float) / np.linalg.norm(h1)
    rng = np.random.default_rng(seed)
    H = rng.standard_normal((samples, h1.size))
    H /= np.linalg.norm(H, axis=1, keepdims=True)
    gap = 1.0 - np.einsum("sa,ab,sb->s", H, P, H) / beta
    c = H @ h1
    # ||hh^T - h1h1^T||_F^2 = 2 (1 - (h.h1)^2)
    dist2 = 2.0 * (1.0 - c * c) / beta**2
    ok = dist2 > 1e-20
    ratio = gap[ok] / dist2[ok]
    lip = float("nan")
    if instance is not None:
        U1 = np.outer(h1, h1) / beta
        d = np.einsum("jab,sa,sb->sj", instance.sensors, H, H) / beta - instance.measure(U1)
        lip = float(np.max(np.linalg.norm(d[ok], axis=1) / np.sqrt(dist2[ok])))
    mr = float(ratio.min()) if ratio.size else float("nan")
    return GrowthReport(mr, lip, int(ok.sum()), bool(mr >= kappa_min))
