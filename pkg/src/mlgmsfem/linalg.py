"""Small numerical kernels: Jacobi PCG, dense generalized eigensolver,
column orthonormalization and the pseudo-inverse Gram quadratic form."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import ConvergenceError, DegenerateWeightError


def cg_solve(A, b, rel_tol: float = 1e-10, max_iter: int | None = None, x0=None):
    """Jacobi-preconditioned conjugate gradients.

    Returns ``(x, iterations)`` with ``||A x - b|| <= rel_tol ||b||`` checked on
    the true residual.  Raises :class:`ConvergenceError` carrying the residual
    history otherwise.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    max_iter = 10 * n + 100 if max_iter is None else max_iter
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0
    diag = A.diagonal() if hasattr(A, "diagonal") else np.diag(A)
    dinv = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    target = rel_tol * bnorm
    history = []

    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for k in range(1, max_iter + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r)
        history.append(res / bnorm)
        if res <= target:
            # the recursive residual drifts; confirm on the true one
            r = b - A @ x
            if np.linalg.norm(r) <= target:
                return x, k
            z = dinv * r
            p = z.copy()
            rz = r @ z
            continue
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(
        f"CG did not reach rel_tol={rel_tol:g} in {max_iter} iterations "
        f"(final {history[-1]:.3e})", history)


@dataclass
class EigenDecomposition:
    values: np.ndarray      # ascending
    vectors: np.ndarray     # columns, S-orthonormal w.r.t. the regularized S


def dense_gen_eig(A, S, eps: float = 1e-12) -> EigenDecomposition:
    """Solve A v = lambda S~ v with S~ = S + eps * (tr S / n) I."""
    A = np.asarray(A, dtype=float)
    S = np.asarray(S, dtype=float)
    n = A.shape[0]
    if n == 0:
        return EigenDecomposition(np.zeros(0), np.zeros((0, 0)))
    A = 0.5 * (A + A.T)
    S = 0.5 * (S + S.T)
    tr = np.trace(S)
    if not tr > 0.0:
        raise DegenerateWeightError("spectral weight matrix has zero trace")
    St = S + eps * (tr / n) * np.eye(n)
    w, V = sla.eigh(A, St)
    return EigenDecomposition(w, V)


def orthonormalize(columns, drop_tol: float = 1e-10):
    """Orthonormal basis of the column span, dropping sigma < drop_tol * sigma_max.

    Returns ``(Q, rank)``.
    """
    X = np.asarray(columns, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] == 0 or not np.any(X):
        warnings.warn("orthonormalize: input has no nonzero column", RuntimeWarning,
                      stacklevel=2)
        return np.zeros((X.shape[0], 0)), 0
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    rank = int(np.count_nonzero(s > drop_tol * s[0]))
    return U[:, :rank], rank


def gram_quadratic(r, G, pinv_tol: float = 1e-12, warn_tol: float = 1e-8) -> float:
    """r' G^+ r for symmetric PSD G, i.e. sup_c |r'c|^2 / (c'Gc)."""
    r = np.asarray(r, dtype=float)
    if r.size == 0:
        return 0.0
    G = np.asarray(G, dtype=float)
    w, V = np.linalg.eigh(0.5 * (G + G.T))
    wmax = w[-1] if w.size else 0.0
    if wmax <= 0.0:
        if np.any(r):
            warnings.warn("gram_quadratic: Gram matrix is zero but residual is not",
                          RuntimeWarning, stacklevel=2)
        return 0.0
    keep = w > pinv_tol * wmax
    c = V.T @ r
    if np.any(~keep):
        null = np.linalg.norm(c[~keep])
        if null > warn_tol * np.linalg.norm(r):
            warnings.warn(
                f"gram_quadratic: residual has a zero-energy component ({null:.2e})",
                RuntimeWarning, stacklevel=2)
    return float(np.sum(c[keep] ** 2 / w[keep]))
