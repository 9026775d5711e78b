"""Symmetric eigensolvers used by the trace-regularized problem.

``jacobi_eigh`` is a cyclic Jacobi method with round-robin (parallel) pair
ordering: each round rotates n/2 disjoint index pairs at once, so one round
costs a handful of vectorized O(n^2) row/column updates instead of n/2 scalar
loops.  ``power_leading`` is the shifted power method with deflation, kept as
the fallback for large matrices where a dense sweep is too expensive.
"""
from __future__ import annotations

import numpy as np


class EigenFailure(RuntimeError):
    pass


DENSE_LIMIT = 512


def _round_robin(n):
    """Yield ``n - 1`` (or ``n``) rounds of disjoint pairs covering all index pairs."""
    idx = list(range(n))
    if n % 2:
        idx.append(-1)  # bye
    m = len(idx)
    for _ in range(m - 1):
        pairs = [(idx[i], idx[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p >= 0 and q >= 0]
        if pairs:
            yield np.array(pairs, dtype=int).T
        idx = [idx[0]] + [idx[-1]] + idx[1:-1]


def _off_norm(a):
    # computed directly; ||a||^2 - ||diag a||^2 cancels catastrophically near convergence
    return float(np.linalg.norm(a - np.diag(np.diag(a))))


def jacobi_eigh(A, tol: float = 1e-15, max_sweeps: int = 60):
    """Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Parameters
    ----------
    A : (n, n) array_like
        Symmetric matrix; only symmetric input is meaningful.
    tol : float
        Sweeps stop once the off-diagonal Frobenius norm is below
        ``tol * ||A||_F``.
    max_sweeps : int

    Returns
    -------
    w : (n,) ndarray
        Eigenvalues in ascending order.
    V : (n, n) ndarray
        Orthonormal eigenvectors as columns, ``A V = V diag(w)``.
    """
    a = np.array(A, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("square matrix required")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if n == 1 or scale == 0.0:
        w = np.diag(a).copy()
        order = np.argsort(w, kind="stable")
        return w[order], v[:, order]
    rounds = list(_round_robin(n))
    for _ in range(max_sweeps):
        off = _off_norm(a)
        if off <= tol * scale:
            break
        for p, q in rounds:
            apq = a[p, q]
            app = a[p, p]
            aqq = a[q, q]
            live = np.abs(apq) > 1e-300
            theta = np.where(live, (aqq - app) / np.where(live, 2.0 * apq, 1.0), 0.0)
            big = np.abs(theta) > 1e150
            th = np.where(big, 0.0, theta)
            t = np.where(big, 0.5 / np.where(big, theta, 1.0), np.sign(th) / (np.abs(th) + np.sqrt(th * th + 1.0)))
            t = np.where(live, t, 0.0)
            t = np.where(live & (theta == 0.0), 1.0, t)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            # columns, then rows: a <- J^T a J with J[p,p]=J[q,q]=c, J[p,q]=s, J[q,p]=-s
            cp, cq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * cp - s * cq
            a[:, q] = s * cp + c * cq
            rp, rq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
    else:
        off = _off_norm(a)
        if off > tol * scale:
            raise EigenFailure(f"Jacobi did not converge in {max_sweeps} sweeps (off = {off:.3e})")
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def power_leading(P, count: int = 1, tol: float = 1e-10, max_iter: int = 20000, seed: int = 0):
    """Largest ``count`` algebraic eigenpairs by shifted power iteration with deflation.

    The shift ``||P||_1`` makes the spectrum nonnegative, so the dominant
    eigenvalue of the shifted matrix is the algebraically largest one of ``P``.

    Raises
    ------
    EigenFailure
        If an eigenresidual ``||P h - s h|| <= tol * ||P||`` is not reached.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    norm = float(np.abs(P).sum(axis=0).max()) if n else 0.0
    rng = np.random.default_rng(seed)
    vals, vecs = [], []
    if norm == 0.0:
        e = np.eye(n)
        return np.zeros(count), e[:, :count]
    shifted = P + norm * np.eye(n)
    for _ in range(count):
        x = rng.standard_normal(n)
        for _ in range(max_iter):
            for u in vecs:
                x -= (u @ x) * u
            x /= np.linalg.norm(x)
            y = shifted @ x
            for u in vecs:
                y -= (u @ y) * u
            s = float(x @ P @ x)
            if np.linalg.norm(P @ x - s * x) <= tol * norm:
                break
            x = y
        else:
            raise EigenFailure(f"power iteration stagnated after {max_iter} steps")
        vals.append(s)
        vecs.append(x)
    return np.array(vals), np.column_stack(vecs)


def leading_eigenpairs(P, count: int = 1):
    """``(values, vectors)`` of the ``count`` largest eigenvalues, descending."""
    P = np.asarray(P, dtype=float)
    if P.shape[0] <= DENSE_LIMIT:
        w, V = jacobi_eigh(P)
        return w[::-1][:count], V[:, ::-1][:, :count]
    return power_leading(P, count)
