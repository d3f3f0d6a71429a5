"""Residual indicators, bulk marking and the multilevel enrichment loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import FREE, FineProblem, stiffness_matrix
from .grid import contained_neighborhoods, neighborhood, transfer_indices
from .linalg import gram_quadratic
from .offline import Cascade
from .solver import References, solve_multiscale

log = logging.getLogger(__name__)

BOTH, LEVEL1, LEVEL2 = "both", "level1", "level2"
MODES = (BOTH, LEVEL1, LEVEL2)


@dataclass
class ResidualIndicator:
    level: int
    region: int
    residual_norm: float
    eta_sq: float
    active_count: int
    flags: list = field(default_factory=list)


def _test_space(cascade: Cascade, level: int, vertex: int):
    """Test functions on omega_{vertex,level} as (local node positions, values)."""
    hier, dofmap = cascade.hier, cascade.dofmap
    region = neighborhood(hier, level, vertex)
    free = dofmap.state[region.fine_nodes] == FREE
    if level + 1 == hier.level_count:
        # fine hats on the interior free nodes
        pos = np.flatnonzero(free & ~region.edge_mask)
        return region, pos, None
    cols = []
    for k in contained_neighborhoods(hier, region, level + 1):
        off = cascade.offline[level + 1][int(k)]
        if off.active_count == 0:
            continue
        blk = np.zeros((region.n_nodes, off.active_count))
        s, d = transfer_indices(off.region, region)
        blk[d] = off.active_basis[s]
        cols.append(blk)
    pos = np.flatnonzero(free)
    if not cols:
        return region, np.zeros(0, dtype=int), np.zeros((0, 0))
    return region, pos, np.hstack(cols)[pos]


def residual_norm(cascade: Cascade, fine: FineProblem, u_H: np.ndarray, level: int,
                  vertex: int, residual: np.ndarray | None = None) -> ResidualIndicator:
    """||R_i|| over the test space of omega_{vertex,level} and eta^2 = ||R||^2 / lambda."""
    g = fine.b - fine.A @ u_H if residual is None else residual
    region, pos, T = _test_space(cascade, level, vertex)
    off = cascade.offline[level][vertex]
    flags = []
    if pos.size == 0 or (T is not None and T.shape[1] == 0):
        return ResidualIndicator(level, vertex, 0.0, 0.0, off.active_count, ["empty-test-space"])
    idx = cascade.dofmap.index[region.fine_nodes[pos]]
    A_loc = stiffness_matrix(cascade.hier, cascade.field, region).tocsr()[pos][:, pos]
    if T is None:
        r = g[idx]
        rn2 = float(r @ spla.splu(A_loc.tocsc()).solve(r))
    else:
        r = T.T @ g[idx]
        rn2 = gram_quadratic(r, T.T @ (A_loc @ T))
    rn2 = max(rn2, 0.0)
    lam = off.next_eigenvalue()
    if lam is None or lam <= 0.0:
        flags.append("ladder-exhausted" if lam is None else "zero-eigenvalue")
        eta_sq = rn2
    else:
        eta_sq = rn2 / lam
    return ResidualIndicator(level, vertex, float(np.sqrt(rn2)), float(eta_sq),
                             off.active_count, flags)


def level_indicators(cascade: Cascade, fine: FineProblem, u_H: np.ndarray, level: int,
                     vertices=None) -> list:
    g = fine.b - fine.A @ u_H
    verts = range(cascade.hier.vertex_count(level)) if vertices is None else vertices
    return [residual_norm(cascade, fine, u_H, level, int(v), g) for v in verts]


def mark(indicators, theta: float) -> list:
    """Smallest set of largest-eta regions whose eta^2 sum exceeds theta * total.

    Ties are broken by list order (stable sort).  Returns region ids.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must be in (0, 1), got {theta}")
    eta = np.array([ind.eta_sq for ind in indicators], dtype=float)
    total = eta.sum()
    if eta.size == 0 or total <= 0.0:
        return []
    order = np.argsort(-eta, kind="stable")
    csum = np.cumsum(eta[order])
    k = int(np.searchsorted(csum, theta * total, side="right")) + 1
    return [indicators[i].region for i in order[:min(k, eta.size)]]


@dataclass
class IterationRecord:
    iteration: int
    dofs: tuple
    dofs_added: tuple
    errors: dict
    eta_sq_sum: float
    marked: dict          # level -> list of marked region ids in the step that followed


@dataclass
class EnrichmentHistory:
    mode: str
    theta: float
    records: list = field(default_factory=list)
    status: str = "running"
    dependent: set = field(default_factory=set)   # level-1 regions flagged level-2 dependent

    def column(self, key):
        return [r.errors.get(key, np.nan) for r in self.records]


def _enrich_region(cascade: Cascade, level: int, vertex: int, decay_threshold: float):
    """Add the next eigenfunction; returns False if the region cannot improve."""
    off = cascade.offline[level][vertex]
    if off.active_count >= off.K:
        return False
    if decay_threshold and off.active_count > 0:
        lo = off.eigenvalues[off.active_count - 1]
        hi = off.eigenvalues[off.active_count]
        if lo > 0 and hi / lo < decay_threshold:
            return False
    off.active_count += 1
    return True


def enrich_loop(cascade: Cascade, fine: FineProblem, references: References,
                theta: float = 0.7, tol: float = 0.0, max_iter: int = 5, mode: str = BOTH,
                decay_threshold: float = 1.05) -> EnrichmentHistory:
    """Solve / estimate / mark / enrich; level-1 marks localize deeper enrichment.

    Enriching level l > 1 regenerates snapshots and spectra of the level-(l-1)
    regions whose pools contain an enriched region, preserving active counts.
    """
    if mode not in MODES:
        raise ValueError(f"unknown enrichment mode {mode!r}")
    N = cascade.hier.level_count
    if N < 3 and mode != LEVEL1:
        raise ValueError("enriching deeper levels needs at least 3 levels")
    hist = EnrichmentHistory(mode, theta)
    levels = list(cascade.levels)
    start = {l: cascade.dof(l) for l in levels}
    for it in range(max_iter + 1):
        sol = solve_multiscale(cascade, fine, references)
        ind1 = level_indicators(cascade, fine, sol.fine_field, 1)
        eta_sum = float(sum(i.eta_sq for i in ind1))
        dofs = tuple(cascade.dof(l) for l in levels)
        rec = IterationRecord(it, dofs, tuple(cascade.dof(l) - start[l] for l in levels),
                              dict(sol.errors), eta_sum, {})
        hist.records.append(rec)
        log.info("%s it %d dofs %s e2 %.4g e2_snap %.4g eta %.3g", mode, it, dofs,
                 sol.errors.get("e2", np.nan), sol.errors.get("e2_snap", np.nan), eta_sum)
        if eta_sum <= tol:
            hist.status = "converged"
            return hist
        if it == max_iter:
            hist.status = "max-iter"
            return hist
        marked1 = mark(ind1, theta)
        rec.marked[1] = marked1
        progress = False
        if mode in (BOTH, LEVEL1):
            for v in marked1:
                if _enrich_region(cascade, 1, v, decay_threshold):
                    progress = True
                else:
                    hist.dependent.add(v)
        if mode in (BOTH, LEVEL2):
            progress |= _enrich_deeper(cascade, fine, sol.fine_field, marked1, theta,
                                       decay_threshold, rec)
        if not progress:
            hist.status = "stagnated"
            return hist
    return hist


def _enrich_deeper(cascade, fine, u_H, marked_parent, theta, decay_threshold, rec) -> bool:
    """Mark and enrich levels 2..N-1 inside the marked coarser regions."""
    hier = cascade.hier
    progress = False
    parents = list(marked_parent)
    enriched = {}
    for level in range(2, hier.level_count):
        cand = sorted({int(k) for p in parents
                       for k in contained_neighborhoods(hier, neighborhood(hier, level - 1, p),
                                                        level)})
        if not cand:
            break
        ind = level_indicators(cascade, fine, u_H, level, cand)
        marked = mark(ind, theta)
        rec.marked[level] = marked
        enriched[level] = [v for v in marked if _enrich_region(cascade, level, v, 0.0)]
        progress |= bool(enriched[level])
        parents = marked
    # regenerate coarser levels bottom-up from the deepest enriched level
    changed = set()
    for level in sorted(enriched, reverse=True):
        touched = set(enriched[level]) | changed
        if not touched:
            continue
        changed = cascade.dependents(level, touched)
        cascade.rebuild(level - 1, sorted(changed))
    return progress
