"""Coarse Galerkin solve in the level-1 offline space, references and errors."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import DofMap, FineProblem, PermeabilityField, ProblemSpec, hat_values
from .grid import GridHierarchy, neighborhood
from .errors import ConvergenceError
from .linalg import cg_solve
from .offline import Cascade
from .snapshot import random_snapshots

log = logging.getLogger(__name__)

DENSE_LIMIT = 4000
REFERENCE_SNAPSHOTS = 32


@dataclass
class MultiscaleSolution:
    coarse_coeffs: np.ndarray
    fine_field: np.ndarray          # over free fine dofs
    dof_counts: tuple               # (DOF_1, DOF_2, ...)
    errors: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    @property
    def e1(self):
        return self.errors.get("e1", np.nan)

    @property
    def e2(self):
        return self.errors.get("e2", np.nan)


def basis_matrix(blocks, dofmap: DofMap) -> sp.csc_matrix:
    """Column-stack local bases ``[(region, values), ...]`` over global free dofs."""
    rows, cols, vals = [], [], []
    ncol = 0
    for region, V in blocks:
        if V.shape[1] == 0:
            continue
        idx = dofmap.index[region.fine_nodes]
        keep = np.flatnonzero(idx >= 0)
        sub = V[keep]
        r, c = np.nonzero(sub)
        rows.append(idx[keep][r])
        cols.append(c + ncol)
        vals.append(sub[r, c])
        ncol += V.shape[1]
    if not rows:
        return sp.csc_matrix((dofmap.n_free, 0))
    return sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(dofmap.n_free, ncol))


def level1_basis(cascade: Cascade) -> sp.csc_matrix:
    blocks = [(off.region, off.active_basis) for off in cascade.level1_spaces()]
    return basis_matrix(blocks, cascade.dofmap)


def assemble_coarse(Phi, A, b):
    """A_H = Phi' A Phi and b_H = Phi' b."""
    if sp.issparse(Phi):
        AH = (Phi.T @ (A @ Phi))
        AH = AH.toarray() if sp.issparse(AH) else np.asarray(AH)
        bH = Phi.T @ b
    else:
        Phi = np.asarray(Phi, dtype=float)
        if Phi.ndim == 1:
            Phi = Phi[:, None]
        AH = Phi.T @ (A @ Phi)
        bH = Phi.T @ b
    AH = 0.5 * (AH + AH.T)
    return AH, np.asarray(bH, dtype=float).ravel(), Phi


def solve_coarse(AH: np.ndarray, bH: np.ndarray, rank_tol: float = 1e-12,
                 dense_limit: int | None = DENSE_LIMIT):
    """Symmetric coarse solve; pseudo-solve with a warning if rank deficient.

    Systems above ``dense_limit`` unknowns go to CG first (None: always dense).

    Returns ``(c, flags)``.
    """
    n = bH.size
    flags = []
    if n == 0:
        return np.zeros(0), flags
    if dense_limit is not None and n > dense_limit:
        try:
            c, _ = cg_solve(sp.csr_matrix(AH), bH, rel_tol=1e-10, max_iter=2 * n)
            return c, flags
        except ConvergenceError:
            warnings.warn(f"coarse CG failed on {n} dofs; falling back to a dense solve",
                          RuntimeWarning, stacklevel=2)
            flags.append("cg-fallback")
    d = np.sqrt(np.clip(np.diag(AH), 0.0, None))
    zero = d <= rank_tol * max(d.max(), 1e-300)
    d[zero] = 1.0
    As = AH / d[:, None] / d[None, :]
    bs = bH / d
    if not zero.any():
        try:
            cf = sla.cho_factor(As, lower=False)
            rcond, info = sla.lapack.dpocon(cf[0], np.linalg.norm(As, 1))
            if info == 0 and rcond > rank_tol:
                return sla.cho_solve(cf, bs) / d, flags
        except np.linalg.LinAlgError:
            pass
    warnings.warn("coarse matrix is rank deficient; using a pseudo-inverse solve",
                  RuntimeWarning, stacklevel=2)
    flags.append("pseudo-solve")
    w, V = np.linalg.eigh(As)
    keep = w > rank_tol * w[-1]
    c = V[:, keep] @ ((V[:, keep].T @ bs) / w[keep])
    return c / d, flags


def galerkin(Phi, A, b, dense_limit: int | None = DENSE_LIMIT):
    """Galerkin solution in span(Phi); returns (coeffs, fine vector, flags)."""
    AH, bH, Phi = assemble_coarse(Phi, A, b)
    c, flags = solve_coarse(AH, bH, dense_limit=dense_limit)
    return c, np.asarray(Phi @ c).ravel(), flags


def solve_fine(hier: GridHierarchy, field: PermeabilityField, spec: ProblemSpec | None = None,
               method: str = "direct", fine: FineProblem | None = None) -> np.ndarray:
    """Fine reference u_h over free dofs (sparse LU, or PCG at rel_tol 1e-10)."""
    fine = FineProblem.build(hier, field, spec) if fine is None else fine
    if fine.dofmap.n_free == 0:
        return np.zeros(0)
    if method == "cg":
        x, it = cg_solve(fine.A, fine.b, rel_tol=1e-10)
        log.info("fine solve: %d PCG iterations", it)
        return x
    if method == "direct":
        return spla.splu(fine.A.tocsc()).solve(fine.b)
    raise ValueError(f"unknown fine solver {method!r}")


def compute_errors(u_H, reference, A, M):
    """Relative (L2, energy) errors of u_H against a reference, over free dofs."""
    u = np.asarray(reference, dtype=float)
    d = np.asarray(u_H, dtype=float) - u
    den1 = float(u @ (M @ u))
    den2 = float(u @ (A @ u))
    if den1 <= 0.0 or den2 <= 0.0:
        warnings.warn("reference has zero norm; relative errors undefined", RuntimeWarning,
                      stacklevel=2)
        return np.nan, np.nan
    e1 = np.sqrt(max(float(d @ (M @ d)), 0.0) / den1)
    e2 = np.sqrt(max(float(d @ (A @ d)), 0.0) / den2)
    return float(e1), float(e2)


def snapshot_basis(hier: GridHierarchy, spaces, dofmap: DofMap) -> sp.csc_matrix:
    """chi-multiplied snapshot columns of every level-1 region."""
    blocks = []
    for snap in spaces:
        chi = hat_values(hier, snap.region.level, snap.region.vertex, snap.region)
        blocks.append((snap.region, chi[:, None] * snap.columns))
    return basis_matrix(blocks, dofmap)


def reference_snapshots(cascade: Cascade, count: int | None = None) -> list:
    """Level-1 fine-grid random snapshot spaces (two-level construction)."""
    hier, cfg = cascade.hier, cascade.config
    if hier.level_count == 2 and count is None:
        return [cascade.snapshots[1][v] for v in sorted(cascade.snapshots[1])]
    count = REFERENCE_SNAPSHOTS if count is None else count
    return [random_snapshots(hier, cascade.field, neighborhood(hier, 1, v), count, cfg.seed,
                             cfg.oversample, cascade.dofmap)
            for v in range(hier.vertex_count(1))]


def solve_snapshot_reference(cascade: Cascade, fine: FineProblem, kind: str = "fine",
                             count: int | None = None, max_dim: int = 12000):
    """u_snap: Galerkin solution in the chi-multiplied level-1 snapshot space.

    ``kind="fine"`` uses two-level random snapshots on the level-1 regions;
    ``kind="own"`` uses the cascade's own level-1 snapshots and returns None if
    the space exceeds ``max_dim``.
    """
    if kind == "fine":
        spaces = reference_snapshots(cascade, count)
    elif kind == "own":
        spaces = [cascade.snapshots[1][v] for v in sorted(cascade.snapshots[1])]
    else:
        raise ValueError(f"unknown snapshot reference {kind!r}")
    dim = sum(s.rank for s in spaces)
    if dim > max_dim:
        log.warning("snapshot reference of dimension %d skipped (cap %d)", dim, max_dim)
        return None
    Phi = snapshot_basis(cascade.hier, spaces, cascade.dofmap)
    with warnings.catch_warnings():
        # snapshot spaces of neighbouring regions overlap; rank deficiency is expected
        warnings.simplefilter("ignore", RuntimeWarning)
        _, u, _ = galerkin(Phi, fine.A, fine.b, dense_limit=None)
    return u


@dataclass
class References:
    u_h: np.ndarray
    u_snap: np.ndarray | None = None


def solve_multiscale(cascade: Cascade, fine: FineProblem,
                     references: References | None = None) -> MultiscaleSolution:
    """Galerkin solve in the active level-1 offline space, with errors if references given."""
    Phi = level1_basis(cascade)
    c, u, flags = galerkin(Phi, fine.A, fine.b)
    dofs = tuple(cascade.dof(l) for l in cascade.levels)
    sol = MultiscaleSolution(c, u, dofs, {}, flags)
    if references is not None:
        e1, e2 = compute_errors(u, references.u_h, fine.A, fine.M)
        sol.errors.update(e1=e1, e2=e2)
        if references.u_snap is not None:
            s1, s2 = compute_errors(u, references.u_snap, fine.A, fine.M)
            sol.errors.update(e1_snap=s1, e2_snap=s2)
        else:
            sol.errors.update(e1_snap=np.nan, e2_snap=np.nan)
    return sol
