"""Smooth fidelity terms F acting on observation vectors.

Every problem in this package represents its observation space Y as R^m with
the Euclidean inner product (problems with a weighted L2 structure embed
isometrically, see :mod:`atomic_fcgcg.heat`), so gradients here are ordinary
Euclidean gradients.
"""
from __future__ import annotations

import numpy as np


class Loss:
    """Interface for a convex, continuously differentiable loss ``F``."""

    #: True when ``F(y) = 0.5 * ||y - target||^2``; enables exact subproblem solvers.
    is_quadratic = False

    def value(self, y: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class SquaredLoss(Loss):
    """``F(y) = 0.5 * ||y - target||^2``."""

    is_quadratic = True

    def __init__(self, target):
        self.target = np.asarray(target, dtype=float)

    def value(self, y):
        r = np.asarray(y, dtype=float) - self.target
        return 0.5 * float(r @ r)

    def grad(self, y):
        return np.asarray(y, dtype=float) - self.target


class CallableLoss(Loss):
    """Wrap a pair of callables ``(value, grad)`` as a generic smooth loss."""

    def __init__(self, value, grad):
        self._value = value
        self._grad = grad

    def value(self, y):
        return float(self._value(np.asarray(y, dtype=float)))

    def grad(self, y):
        return np.asarray(self._grad(np.asarray(y, dtype=float)), dtype=float)
