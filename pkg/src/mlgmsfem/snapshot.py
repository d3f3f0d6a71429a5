"""Snapshot spaces.

Two constructions:

* :func:`random_snapshots` solves the fine-grid homogeneous problem on an
  oversampled region with i.i.d. random boundary data (finest coarse level).
* :func:`iterated_snapshots` solves the same cell problem on a coarser region
  inside the span of finer-level offline bases, using basis functions with a
  nonzero trace as boundary data.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .assembly import FREE, DofMap, PermeabilityField, build_dofmap, stiffness_matrix
from .errors import NumericalError
from .grid import (GridHierarchy, Neighborhood, oversample, overlapping_neighborhoods,
                   transfer_indices)
from .linalg import orthonormalize

RANDOMIZED = "randomized"
TRACE_EXHAUSTIVE = "trace-exhaustive"
TRACE_RANDOMIZED = "trace-randomized"


@dataclass
class SnapshotSpace:
    level: int
    vertex: int
    region: Neighborhood
    columns: np.ndarray          # (region.n_nodes, rank), orthonormal
    provenance: str
    flags: list = field(default_factory=list)

    @property
    def rank(self) -> int:
        return self.columns.shape[1]


def stream(seed: int, level: int, vertex: int, j: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(level), int(vertex), int(j)]))


def _restrict(values: np.ndarray, src: Neighborhood, dst: Neighborhood) -> np.ndarray:
    if src.rect == dst.rect:
        return values
    s, d = transfer_indices(src, dst)
    out = np.zeros((dst.n_nodes,) + values.shape[1:])
    out[d] = values[s]
    return out


def _zero_constrained(Q: np.ndarray, region: Neighborhood, dofmap: DofMap) -> np.ndarray:
    """Orthonormalization leaves rounding noise on Dirichlet nodes; clear it."""
    Q[dofmap.state[region.fine_nodes] != FREE] = 0.0
    return Q


def harmonic_extension(hier: GridHierarchy, field: PermeabilityField, region: Neighborhood,
                       boundary_values: np.ndarray, dofmap: DofMap | None = None):
    """Fine-grid discrete L-harmonic fields on ``region`` with given edge data.

    ``boundary_values`` has one row per free edge node (see
    :func:`mlgmsfem.assembly.free_boundary_nodes`) and one column per field.
    Returns the fields on all region nodes.
    """
    dofmap = build_dofmap(hier, field.active_mask) if dofmap is None else dofmap
    A = stiffness_matrix(hier, field, region).tocsr()
    free = dofmap.state[region.fine_nodes] == FREE
    bnd = np.flatnonzero(free & region.edge_mask)
    inn = np.flatnonzero(free & ~region.edge_mask)
    G = np.asarray(boundary_values, dtype=float).reshape(bnd.size, -1)
    psi = np.zeros((region.n_nodes, G.shape[1]))
    psi[bnd] = G
    if inn.size:
        lu = spla.splu(A[inn][:, inn].tocsc())
        psi[inn] = lu.solve(-(A[inn][:, bnd] @ G))
    return psi


def random_snapshots(hier: GridHierarchy, field: PermeabilityField, neigh: Neighborhood,
                     count: int, seed: int = 0, layers=4, dofmap: DofMap | None = None,
                     return_oversampled: bool = False):
    """Oversampled harmonic snapshots with i.i.d. Uniform(-1, 1) boundary data."""
    if count < 1:
        raise ValueError("snapshot count must be >= 1")
    dofmap = build_dofmap(hier, field.active_mask) if dofmap is None else dofmap
    region = oversample(neigh, layers)
    flags = []
    free = dofmap.state[region.fine_nodes] == FREE
    n_bnd = int(np.count_nonzero(free & region.edge_mask))
    inner_free = dofmap.state[neigh.fine_nodes] == FREE
    if n_bnd == 0 or not inner_free.any():
        flags.append("degenerate")
        empty = SnapshotSpace(neigh.level, neigh.vertex, neigh, np.zeros((neigh.n_nodes, 0)),
                              RANDOMIZED, flags)
        return (empty, np.zeros((region.n_nodes, 0)), region) if return_oversampled else empty
    if count > n_bnd:
        warnings.warn(f"level {neigh.level} vertex {neigh.vertex}: {count} snapshots requested "
                      f"but only {n_bnd} boundary dofs; clipping", RuntimeWarning, stacklevel=2)
        flags.append("count-clipped")
        count = n_bnd
    G = np.empty((n_bnd, count))
    for j in range(count):
        G[:, j] = stream(seed, neigh.level, neigh.vertex, j).uniform(-1.0, 1.0, n_bnd)
    if not region.touches_domain_boundary():
        G = np.hstack([G, np.ones((n_bnd, 1))])
    psi = harmonic_extension(hier, field, region, G, dofmap)
    Q, _ = orthonormalize(_restrict(psi, region, neigh))
    Q = _zero_constrained(Q, neigh, dofmap)
    space = SnapshotSpace(neigh.level, neigh.vertex, neigh, Q, RANDOMIZED, flags)
    if return_oversampled:
        return space, psi, region
    return space


def trace_classify(columns: np.ndarray, region: Neighborhood, rel_tol: float = 1e-12):
    """Split columns into (Gamma, I): nonzero vs. vanishing trace on the region edge."""
    X = np.abs(np.asarray(columns))
    if X.ndim == 1:
        X = X[:, None]
    overall = X.max(axis=0) if X.shape[0] else np.zeros(X.shape[1])
    on_edge = X[region.edge_mask].max(axis=0) if X.shape[1] else overall
    gamma = on_edge > rel_tol * overall
    return np.flatnonzero(gamma), np.flatnonzero(~gamma)


def collect_pool(hier: GridHierarchy, work: Neighborhood, offline_spaces: dict, level: int):
    """Active level offline bases meeting ``work``, restricted to its nodes."""
    blocks, owners = [], []
    for k in overlapping_neighborhoods(hier, work, level):
        off = offline_spaces.get(int(k))
        if off is None or off.active_count == 0:
            continue
        blk = _restrict(off.active_basis, off.region, work)
        nz = np.any(blk != 0.0, axis=0)
        if nz.any():
            blocks.append(blk[:, nz])
            owners.extend([int(k)] * int(nz.sum()))
    if not blocks:
        return np.zeros((work.n_nodes, 0)), np.zeros(0, dtype=int)
    return np.hstack(blocks), np.asarray(owners)


def iterated_snapshots(hier: GridHierarchy, field: PermeabilityField, region: Neighborhood,
                       offline_spaces: dict, mode: str = TRACE_EXHAUSTIVE,
                       count: int | None = None, seed: int = 0, layers: int = 0,
                       reg_eps: float = 1e-12, dofmap: DofMap | None = None) -> SnapshotSpace:
    """Snapshots of a level-(l-1) region from level-l offline spaces.

    ``offline_spaces`` maps level-l vertex ids to offline spaces.  Boundary data
    are imposed coefficient-wise: each Gamma column (nonzero trace) is a
    boundary dof and the I columns are extended energy-minimally.
    """
    level = region.level + 1
    dofmap = build_dofmap(hier, field.active_mask) if dofmap is None else dofmap
    if layers:
        sx, sy = hier.cell_size(level)
        work = oversample(region, (layers * sx, layers * sy))
    else:
        work = region
    B, _ = collect_pool(hier, work, offline_spaces, level)
    flags = []
    if B.shape[1] == 0:
        flags.append("degenerate")
        return SnapshotSpace(region.level, region.vertex, region,
                             np.zeros((region.n_nodes, 0)), mode, flags)
    gamma, inner = trace_classify(B, work)
    if gamma.size == 0:
        warnings.warn(f"level {region.level} vertex {region.vertex}: no basis function has a "
                      "nonzero trace; using interior columns", RuntimeWarning, stacklevel=2)
        flags.append("empty-trace")
        Q, _ = orthonormalize(_restrict(B, work, region))
        return SnapshotSpace(region.level, region.vertex, region,
                             _zero_constrained(Q, region, dofmap), mode, flags)

    BG = B[:, gamma]
    if mode == TRACE_EXHAUSTIVE:
        C = np.eye(gamma.size)
    elif mode == TRACE_RANDOMIZED:
        count = 2 * gamma.size if count is None else int(count)
        C = np.empty((gamma.size, count))
        for j in range(count):
            C[:, j] = stream(seed, region.level, region.vertex, j).uniform(-1.0, 1.0, gamma.size)
    else:
        raise ValueError(f"unknown snapshot mode {mode!r}")

    psi = BG @ C
    if inner.size:
        QI, rI = orthonormalize(B[:, inner])
        if rI:
            A = stiffness_matrix(hier, field, work)
            AQ = A @ QI
            AII = QI.T @ AQ
            AII = 0.5 * (AII + AII.T)
            AII[np.diag_indices_from(AII)] += reg_eps * max(np.trace(AII), 0.0) / rI
            try:
                cf = sla.cho_factor(AII)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(
                    f"level {region.level} vertex {region.vertex}: reduced interior "
                    f"stiffness is singular") from exc
            psi = psi + QI @ sla.cho_solve(cf, -(AQ.T @ psi))
    Q, _ = orthonormalize(_restrict(psi, work, region))
    return SnapshotSpace(region.level, region.vertex, region,
                         _zero_constrained(Q, region, dofmap), mode, flags)
