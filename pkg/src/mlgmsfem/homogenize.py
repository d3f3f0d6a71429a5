"""Re-iterated numerical homogenization with linear-boundary cell problems."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import FineProblem, element_data, tensor_stiffness_matrix
from .grid import GridHierarchy
from .solver import compute_errors


@dataclass
class EffectiveTensor:
    raw: np.ndarray          # 2x2 flux average, column i from phi_i
    flags: list = field(default_factory=list)

    @property
    def sym(self) -> np.ndarray:
        return 0.5 * (self.raw + self.raw.T)


def _as_tensors(kappa) -> np.ndarray:
    k = np.asarray(kappa, dtype=float)
    if k.ndim == 2:
        return k[..., None, None] * np.eye(2)
    if k.ndim == 4 and k.shape[2:] == (2, 2):
        return k
    raise ValueError("kappa must be (ny, nx) scalars or (ny, nx, 2, 2) tensors")


def cell_effective_tensor(kappa, h, active=None) -> EffectiveTensor:
    """kappa* of a block made of ``kappa`` children with child size ``h``.

    Solves div(kappa grad phi_i) = 0 with phi_i = x_i on the block boundary;
    holes (inactive children) carry natural conditions.
    """
    T = _as_tensors(kappa)
    ny, nx = T.shape[:2]
    active = np.ones((ny, nx), dtype=bool) if active is None else np.asarray(active, dtype=bool)
    hx, hy = h
    area = nx * hx * ny * hy
    if not active.any():
        warnings.warn("fully perforated block; effective tensor set to zero", RuntimeWarning,
                      stacklevel=2)
        return EffectiveTensor(np.zeros((2, 2)), ["perforated"])
    A = tensor_stiffness_matrix((nx, ny), h, T, active).tocsr()
    # nodes touched by an active child
    touch = np.zeros((ny + 1, nx + 1), dtype=bool)
    for dy in (0, 1):
        for dx in (0, 1):
            touch[dy:dy + ny, dx:dx + nx] |= active
    edge = np.zeros_like(touch)
    edge[0, :] = edge[-1, :] = edge[:, 0] = edge[:, -1] = True
    touch, edge = touch.ravel(), edge.ravel()
    bnd = np.flatnonzero(touch & edge)
    inn = np.flatnonzero(touch & ~edge)
    X = np.tile(np.arange(nx + 1) * hx, ny + 1)
    Y = np.repeat(np.arange(ny + 1) * hy, nx + 1)
    G = np.stack([X[bnd], Y[bnd]], axis=1)
    phi = np.zeros((X.size, 2))
    phi[bnd] = G
    flags = []
    if inn.size:
        Aii = A[inn][:, inn].tocsc()
        rhs = -(A[inn][:, bnd] @ G)
        try:
            phi[inn] = spla.splu(Aii).solve(rhs)
        except RuntimeError:
            flags.append("singular")
    if "singular" in flags or not bnd.size:
        warnings.warn("singular cell problem; using the arithmetic average of active children",
                      RuntimeWarning, stacklevel=2)
        return EffectiveTensor(T[active].mean(axis=0), flags + ["singular"])
    # cell integrals of grad phi: (area / 4) * sum_q dN_q phi_e
    ed = element_data(hx, hy)
    iy, ix = np.nonzero(active)
    n0 = iy * (nx + 1) + ix
    conn = np.stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1], axis=1)
    gsum = ed.dN.sum(axis=0) * (hx * hy / 4.0)          # (2, 4)
    grads = np.einsum("am,cmi->cai", gsum, phi[conn])   # (cells, 2 dirs, 2 problems)
    flux = np.einsum("cab,cbi->ai", T[iy, ix], grads)
    return EffectiveTensor(flux / area, flags)


@dataclass
class HomogenizationResult:
    tensors: dict            # level -> (nly, nlx, 2, 2) raw tensors
    flags: dict              # level -> {block id: flags}

    def sym(self, level: int) -> np.ndarray:
        t = self.tensors[level]
        return 0.5 * (t + np.swapaxes(t, -1, -2))


def reiterate_homogenize(hier: GridHierarchy, kappa: np.ndarray,
                         active: np.ndarray | None = None) -> HomogenizationResult:
    """Effective tensors from level N-1 up to level 1, children first."""
    N = hier.level_count
    child = _as_tensors(kappa)
    child_active = (np.ones(child.shape[:2], dtype=bool) if active is None
                    else np.asarray(active, dtype=bool))
    h = hier.h
    tensors, flags = {}, {}
    for level in range(N - 1, 0, -1):
        nlx, nly = hier.level_dims(level)
        cx, cy = hier.coarsening[level]
        out = np.zeros((nly, nlx, 2, 2))
        lflags = {}
        for by in range(nly):
            for bx in range(nlx):
                sl = (slice(by * cy, (by + 1) * cy), slice(bx * cx, (bx + 1) * cx))
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always")
                    et = cell_effective_tensor(child[sl], h, child_active[sl])
                if caught:
                    warnings.warn(f"level {level} block ({bx}, {by}): {caught[0].message}",
                                  RuntimeWarning, stacklevel=2)
                out[by, bx] = et.raw
                if et.flags:
                    lflags[by * nlx + bx] = et.flags
        tensors[level] = out
        flags[level] = lflags
        child = 0.5 * (out + np.swapaxes(out, -1, -2))
        child_active = np.array([[not {"perforated"} & set(lflags.get(by * nlx + bx, []))
                                  for bx in range(nlx)] for by in range(nly)], dtype=bool)
        h = hier.mesh_size(level)
    return HomogenizationResult(tensors, flags)


def prolongation(hier: GridHierarchy, level: int) -> sp.csr_matrix:
    """Bilinear interpolation from level vertices to all fine nodes."""
    def interp1d(n_fine, n_coarse):
        s = n_fine // n_coarse
        i = np.arange(n_fine + 1)
        left = np.minimum(i // s, n_coarse - 1)
        t = (i - left * s) / s
        rows = np.concatenate([i, i])
        cols = np.concatenate([left, left + 1])
        vals = np.concatenate([1.0 - t, t])
        keep = vals != 0.0
        return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])),
                             shape=(n_fine + 1, n_coarse + 1))
    nx, ny = hier.fine_dims
    nlx, nly = hier.level_dims(level)
    return sp.kron(interp1d(ny, nly), interp1d(nx, nlx), format="csr")


@dataclass
class HomogenizedSolution:
    coarse: np.ndarray       # level-1 nodal values
    fine_field: np.ndarray   # prolonged, over free fine dofs
    errors: dict


def solve_homogenized(hier: GridHierarchy, tensors: np.ndarray, fine: FineProblem,
                      u_h: np.ndarray | None = None) -> HomogenizedSolution:
    """Bilinear coarse solve with the symmetrized level-1 tensors, prolonged to the fine grid."""
    nlx, nly = hier.level_dims(1)
    T = 0.5 * (tensors + np.swapaxes(tensors, -1, -2))
    A = tensor_stiffness_matrix((nlx, nly), hier.mesh_size(1), T).tocsr()
    P = prolongation(hier, 1)[fine.dofmap.free]
    b = P.T @ fine.b
    state = np.zeros((nly + 1, nlx + 1), dtype=bool)
    state[1:-1, 1:-1] = True
    free = np.flatnonzero(state.ravel() & (A.diagonal() > 0))
    u = np.zeros((nly + 1) * (nlx + 1))
    if free.size:
        u[free] = spla.splu(A[free][:, free].tocsc()).solve(b[free])
    uf = P @ u
    errors = {}
    if u_h is not None:
        e1, e2 = compute_errors(uf, u_h, fine.A, fine.M)
        errors = {"e1": e1, "e2": e2}
    return HomogenizedSolution(u, uf, errors)


def write_tensor_csv(tensors: np.ndarray, path) -> None:
    nly, nlx = tensors.shape[:2]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block", "k_xx", "k_xy", "k_yx", "k_yy"])
        for by in range(nly):
            for bx in range(nlx):
                t = tensors[by, bx]
                w.writerow([by * nlx + bx] + [repr(float(v)) for v in
                                              (t[0, 0], t[0, 1], t[1, 0], t[1, 1])])
