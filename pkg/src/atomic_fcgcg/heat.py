"""Sparse initial-source identification for the 2-D Dirichlet heat equation.

Unknown: a finite signed combination of Dirac masses ``u`` on ``(0, 1)^2``.
Data: the temperature ``y(T)`` produced by ``u`` as initial condition, observed
at every interior node.  The regularizer is ``beta * ||u||_M``, whose unit ball
has extremal points ``+-delta_x / beta``.

Discretization: 5-point finite differences on ``n x n`` interior nodes with
``h = 1 / (n + 1)`` and implicit Euler in time.  A Dirac at node ``x`` is the
grid function ``e_x / h^2``; the observation space ``L^2`` is embedded
isometrically into ``R^{n^2}`` by scaling nodal values with ``h``, so all
linear algebra downstream uses the plain Euclidean inner product.  The
pairing between measures and continuous functions is nodal evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .core import ActiveIterate, Problem
from .losses import SquaredLoss


class BoundaryTooClose(ValueError):
    pass


class HeatGrid:
    """Uniform interior grid with a cached implicit-Euler factorization."""

    def __init__(self, n: int = 127, dt: float = 1e-3, T: float = 0.1):
        if n < 1:
            raise ValueError("n must be positive")
        if not dt > 0 or not T > 0:
            raise ValueError("dt and T must be positive")
        steps = T / dt
        if abs(steps - round(steps)) > 1e-12 * max(1.0, steps):
            raise ValueError(f"T/dt = {steps} is not an integer")
        self.n = int(n)
        self.dt = float(dt)
        self.T = float(T)
        self.steps = int(round(steps))
        self.h = 1.0 / (n + 1)
        one_d = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n, n))
        eye = sp.identity(n)
        # discrete Laplacian (negative definite); node index = ix * n + iy
        self.laplacian = ((sp.kron(one_d, eye) + sp.kron(eye, one_d)) / self.h**2).tocsc()
        self.system = (sp.identity(n * n) - self.dt * self.laplacian).tocsc()
        self.factorization = splu(self.system, permc_spec="MMD_AT_PLUS_A")

    @property
    def size(self) -> int:
        return self.n * self.n

    def march(self, v, transpose: bool = False) -> np.ndarray:
        """Apply ``(I - dt * Lap)^{-steps}`` (or its transpose) to ``v``."""
        trans = "T" if transpose else "N"
        out = np.array(v, dtype=float)
        for _ in range(self.steps):
            out = self.factorization.solve(out, trans=trans)
        return out

    def coords(self, node: int) -> np.ndarray:
        ix, iy = divmod(int(node), self.n)
        return np.array([(ix + 1) * self.h, (iy + 1) * self.h])

    def all_coords(self) -> np.ndarray:
        ix, iy = np.divmod(np.arange(self.size), self.n)
        return np.column_stack([(ix + 1) * self.h, (iy + 1) * self.h])

    def nearest_node(self, position) -> int:
        ix, iy = (int(round(c / self.h)) - 1 for c in position)
        if not (0 <= ix < self.n and 0 <= iy < self.n):
            raise ValueError(f"position {position} is not strictly interior")
        return ix * self.n + iy

    def unit_load(self, node: int) -> np.ndarray:
        e = np.zeros(self.size)
        e[node] = 1.0
        return e

    def point_source(self, position, coefficient: float = 1.0) -> np.ndarray:
        """Grid function of ``coefficient * delta_position`` (bilinear splitting onto nodes)."""
        x, y = position
        if not (0 < x < 1 and 0 < y < 1):
            raise ValueError(f"position {position} is not strictly interior")
        gx, gy = x / self.h - 1.0, y / self.h - 1.0
        u = np.zeros(self.size)
        ix0, iy0 = int(np.floor(gx)), int(np.floor(gy))
        for ix, wx in ((ix0, 1.0 - (gx - ix0)), (ix0 + 1, gx - ix0)):
            for iy, wy in ((iy0, 1.0 - (gy - iy0)), (iy0 + 1, gy - iy0)):
                w = wx * wy
                if w == 0.0:
                    continue
                if not (0 <= ix < self.n and 0 <= iy < self.n):
                    continue  # mass assigned to a boundary node is absorbed
                u[ix * self.n + iy] += w * coefficient / self.h**2
        return u


def heat_forward(u0, grid: HeatGrid) -> np.ndarray:
    """Nodal ``y(T)`` for the initial grid function ``u0``."""
    return grid.march(u0)


def heat_adjoint(phi, grid: HeatGrid) -> np.ndarray:
    """Nodal ``z(0)`` of the backward equation with final value ``phi``.

    Implemented as the transpose of :func:`heat_forward`, so
    ``<heat_adjoint(phi), u0> = <phi, heat_forward(u0)>`` holds at the
    discrete level.
    """
    return grid.march(phi, transpose=True)


@dataclass(frozen=True)
class SpikeAtom:
    node: int
    sign: int
    scale: float  # 1 / beta


@dataclass
class HeatDataset:
    y_d: np.ndarray
    truth: list  # [(position, coefficient), ...]
    noise_rel: float
    seed: int
    clean: np.ndarray = field(repr=False, default=None)


def make_dataset(truth, noise_rel: float, seed: int, grid: HeatGrid) -> HeatDataset:
    """Synthesize ``y_d = K u_true + noise`` with an exact relative noise level.

    ``truth`` is a list of ``(position, coefficient)`` pairs.  The noise is iid
    Gaussian per node, rescaled so that ``||noise|| / ||K u_true|| == noise_rel``.
    """
    u = np.zeros(grid.size)
    truth = [(tuple(map(float, p)), float(c)) for p, c in truth]
    for pos, coef in truth:
        u += grid.point_source(pos, coef)
    clean = heat_forward(u, grid)
    y_d = clean.copy()
    if noise_rel > 0:
        rng = np.random.default_rng(seed)
        zeta = rng.standard_normal(grid.size)
        zeta *= noise_rel * np.linalg.norm(clean) / np.linalg.norm(zeta)
        y_d = clean + zeta
    return HeatDataset(y_d=y_d, truth=truth, noise_rel=float(noise_rel), seed=int(seed), clean=clean)


@dataclass
class HeatDual:
    """Nodal values of ``z(0) = -K_* grad F``."""

    z: np.ndarray
    beta: float

    def value_at(self, atom) -> float:
        s = atom.payload
        return s.sign * float(self.z[s.node]) / self.beta

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.z)))


class HeatProblem(Problem):
    """``min 0.5 ||y(T) - y_d||^2_{L2} + beta ||u||_M`` over Dirac combinations."""

    def __init__(self, grid: HeatGrid, y_d, beta: float):
        if not beta > 0:
            raise ValueError("beta must be positive")
        self.grid = grid
        self.beta = float(beta)
        self.y_d = np.asarray(y_d, dtype=float)
        if self.y_d.shape != (grid.size,):
            raise ValueError("y_d must hold one value per interior node")
        self.observation_dim = grid.size
        self.loss = SquaredLoss(grid.h * self.y_d)
        self._kernel = lru_cache(maxsize=512)(self._kernel_column)

    def _kernel_column(self, node: int) -> np.ndarray:
        col = heat_forward(self.grid.unit_load(node), self.grid)
        col.setflags(write=False)
        return col

    def spike(self, node: int, sign: int) -> SpikeAtom:
        return SpikeAtom(int(node), 1 if sign >= 0 else -1, 1.0 / self.beta)

    def atom_forward(self, payload: SpikeAtom) -> np.ndarray:
        # h * K(sign / beta * e_x / h^2)
        return (payload.sign * payload.scale / self.grid.h) * self._kernel(payload.node)

    def atom_key(self, payload: SpikeAtom):
        return (payload.node, payload.sign)

    def dual_from_gradient(self, grad) -> HeatDual:
        z = -heat_adjoint(np.asarray(grad, dtype=float), self.grid) / self.grid.h
        return HeatDual(z, self.beta)

    def insert(self, dual: HeatDual):
        node = int(np.argmax(np.abs(dual.z)))  # first maximizer on ties
        sign = 1 if dual.z[node] >= 0 else -1
        atom = self.make_atom(self.spike(node, sign))
        return atom, abs(float(dual.z[node])) / self.beta

    def nodal_coefficients(self, iterate: ActiveIterate) -> dict:
        """Dirac coefficient per node: ``sum lam * sign / beta``."""
        coef = {}
        for a, w in zip(iterate.atoms, iterate.weights):
            coef[a.payload.node] = coef.get(a.payload.node, 0.0) + w * a.payload.sign / self.beta
        return coef

    def regularizer(self, iterate: ActiveIterate) -> float:
        return self.beta * sum(abs(c) for c in self.nodal_coefficients(iterate).values())

    def atom_distance(self, a, b) -> float:
        """``|sigma_a - sigma_b| + |x_a - x_b|`` between two spike atoms."""
        pa, pb = a.payload, b.payload
        d = np.linalg.norm(self.grid.coords(pa.node) - self.grid.coords(pb.node))
        return abs(pa.sign - pb.sign) + float(d)

    atom_header = ("node", "x", "y", "sign", "weight", "coefficient")

    def atom_rows(self, iterate: ActiveIterate):
        rows = []
        for a, w in zip(iterate.atoms, iterate.weights):
            x, y = self.grid.coords(a.payload.node)
            rows.append((a.payload.node, float(x), float(y), a.payload.sign, float(w),
                         float(w * a.payload.sign / self.beta)))
        return rows

    def iterate_from_rows(self, rows) -> ActiveIterate:
        atoms = [self.make_atom(self.spike(int(r[0]), int(r[3]))) for r in rows]
        return ActiveIterate(atoms, [float(r[4]) for r in rows])

    def spikes(self, iterate: ActiveIterate):
        """``[(x, y, coefficient), ...]`` in physical units."""
        out = []
        for node, c in sorted(self.nodal_coefficients(iterate).items()):
            x, y = self.grid.coords(node)
            out.append((x, y, c))
        return out


@dataclass
class NondegeneracyReport:
    node: int
    hessian: np.ndarray
    max_eigenvalue: float
    gamma: float  # -max_eigenvalue
    growth_radius: float  # physical radius of the verified strictly concave region
    passed: bool


def _hessian_at(f, ix, iy, h):
    fxx = (f[ix + 1, iy] - 2 * f[ix, iy] + f[ix - 1, iy]) / h**2
    fyy = (f[ix, iy + 1] - 2 * f[ix, iy] + f[ix, iy - 1]) / h**2
    fxy = (f[ix + 1, iy + 1] - f[ix + 1, iy - 1] - f[ix - 1, iy + 1] + f[ix - 1, iy - 1]) / (4 * h**2)
    return np.array([[fxx, fxy], [fxy, fyy]])


def check_nondegeneracy(z, node: int, grid: HeatGrid, radius: int = 6, gamma_min: float = 1e-6):
    """Curvature of the dual at a recovered spike.

    Estimates the Hessian of ``sign(z(x)) * z`` at ``node`` by central
    differences with step ``h`` and passes iff its largest eigenvalue is
    ``<= -gamma_min``.  ``growth_radius`` is the largest ``r <= radius * h``
    such that every node within distance ``r`` keeps the sign of the spike and
    has Hessian eigenvalues ``<= -gamma / 2``.
    """
    n, h = grid.n, grid.h
    ix, iy = divmod(int(node), n)
    if min(ix, iy) < radius + 1 or max(ix, iy) > n - radius - 2:
        raise BoundaryTooClose(f"node {node} closer than {radius + 1} nodes to the boundary")
    f = np.asarray(z, dtype=float).reshape(n, n)
    sgn = 1.0 if f[ix, iy] >= 0 else -1.0
    f = sgn * f
    H = _hessian_at(f, ix, iy, h)
    lam_max = float(np.linalg.eigvalsh(H).max())
    gamma = -lam_max
    growth_r = 0.0
    if gamma > 0:
        for r in range(1, radius + 1):
            ok = True
            for dx in range(-r, r + 1):
                for dy in range(-r, r + 1):
                    if dx * dx + dy * dy > r * r:
                        continue
                    jx, jy = ix + dx, iy + dy
                    if f[jx, jy] <= 0 or np.linalg.eigvalsh(_hessian_at(f, jx, jy, h)).max() > -gamma / 2:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
            growth_r = r * h
    return NondegeneracyReport(int(node), H, lam_max, gamma, growth_r, lam_max <= -gamma_min)


def nodal_gradient(z, node: int, grid: HeatGrid) -> np.ndarray:
    """Central-difference gradient of ``sign(z(node)) * z`` at an interior node."""
    n, h = grid.n, grid.h
    ix, iy = divmod(int(node), n)
    f = np.asarray(z, dtype=float).reshape(n, n)
    sgn = 1.0 if f[ix, iy] >= 0 else -1.0
    return sgn * np.array([f[ix + 1, iy] - f[ix - 1, iy], f[ix, iy + 1] - f[ix, iy - 1]]) / (2 * h)


def quadratic_growth_margin(z, beta: float, node: int, gamma: float, radius: float, grid: HeatGrid,
                            gradient=None) -> float:
    """Min over nodes within ``radius`` of ``beta - |z(x)| - gamma/4 |x - x_node|^2``.

    Nonnegative iff the quadratic growth inequality holds on that disc.  With
    ``gradient`` given, ``|gradient| * |x - x_node|`` is added back: the grid
    maximum is generally not a critical point of the interpolated dual, and
    this first-order term bounds the resulting shortfall.
    """
    pts = grid.all_coords()
    x0 = grid.coords(node)
    d2 = np.sum((pts - x0) ** 2, axis=1)
    mask = d2 <= radius**2 + 1e-15
    margin = beta - np.abs(np.asarray(z)[mask]) - 0.25 * gamma * d2[mask]
    if gradient is not None:
        margin = margin + float(np.linalg.norm(gradient)) * np.sqrt(d2[mask])
    return float(margin.min())
