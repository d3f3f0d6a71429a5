"""Bilinear finite element assembly on the structured fine grid.

Element-local node order is counter-clockwise: (0,0), (1,0), (1,1), (0,1).
All integrals use 2x2 Gauss quadrature, exact for cell-constant coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateRegionError
from .grid import GridHierarchy, Neighborhood

FREE, CONSTRAINED, REMOVED = 0, 1, 2

_GP = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
# (xi, eta) of the four Gauss points on the unit square, each with weight 1/4
GAUSS_POINTS = np.array([(x, y) for y in _GP for x in _GP])
_CORNERS = np.array([(0, 0), (1, 0), (1, 1), (0, 1)], dtype=float)


def _shape(xi, eta):
    """Bilinear shape values and reference gradients at one point."""
    cx, cy = _CORNERS[:, 0], _CORNERS[:, 1]
    fx = np.where(cx == 1, xi, 1 - xi)
    fy = np.where(cy == 1, eta, 1 - eta)
    dfx = np.where(cx == 1, 1.0, -1.0)
    dfy = np.where(cy == 1, 1.0, -1.0)
    return fx * fy, np.stack([dfx * fy, fx * dfy])


@dataclass(frozen=True)
class ElementData:
    """Quadrature data for one hx-by-hy rectangle."""

    hx: float
    hy: float
    N: np.ndarray        # (4 gauss, 4 nodes) shape values
    dN: np.ndarray       # (4 gauss, 2, 4) physical gradients
    K: np.ndarray        # (2, 2, 4, 4): K[a, b] = int dN_a[m] dN_b[n]
    mass: np.ndarray     # (4, 4)
    NN: np.ndarray       # (4 gauss, 4, 4): w_q |J| N_m N_n

    @property
    def stiffness(self) -> np.ndarray:
        return self.K[0, 0] + self.K[1, 1]

    def tensor_stiffness(self, T: np.ndarray) -> np.ndarray:
        """Element matrices for per-cell 2x2 tensors ``T`` of shape (nc, 2, 2)."""
        return np.einsum("cab,abmn->cmn", T, self.K)


@lru_cache(maxsize=32)
def element_data(hx: float, hy: float) -> ElementData:
    area = hx * hy
    w = area / 4.0
    N = np.empty((4, 4))
    dN = np.empty((4, 2, 4))
    for q, (xi, eta) in enumerate(GAUSS_POINTS):
        n, dref = _shape(xi, eta)
        N[q] = n
        dN[q, 0] = dref[0] / hx
        dN[q, 1] = dref[1] / hy
    K = w * np.einsum("qam,qbn->abmn", dN, dN)
    NN = w * np.einsum("qm,qn->qmn", N, N)
    return ElementData(hx, hy, N, dN, K, NN.sum(axis=0), NN)


# -- coefficient and problem data ---------------------------------------------

@dataclass
class PermeabilityField:
    """Cell-wise conductivity ``values[iy, ix]`` and active mask (False = hole)."""

    values: np.ndarray
    active_mask: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("permeability values must be a 2D (ny, nx) array")
        if self.active_mask is None:
            self.active_mask = np.ones(self.values.shape, dtype=bool)
        self.active_mask = np.asarray(self.active_mask, dtype=bool)
        if self.active_mask.shape != self.values.shape:
            raise ValueError(
                f"mask shape {self.active_mask.shape} != values shape {self.values.shape}")

    @property
    def dims(self) -> tuple[int, int]:
        ny, nx = self.values.shape
        return nx, ny

    @classmethod
    def constant(cls, dims, value=1.0, active_mask=None):
        nx, ny = dims
        return cls(np.full((ny, nx), float(value)), active_mask)

    def validate(self) -> None:
        v = self.values[self.active_mask]
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            bad = np.argwhere(self.active_mask & ~(np.isfinite(self.values) & (self.values > 0)))
            iy, ix = bad[0]
            raise ValueError(f"non-positive or non-finite kappa on active cell ({ix}, {iy})")

    def scaled(self, c: float) -> "PermeabilityField":
        return PermeabilityField(self.values * c, self.active_mask.copy())


@dataclass
class ProblemSpec:
    """Source term (constant or per-cell raster) with homogeneous Dirichlet data."""

    rhs: float | np.ndarray = 1.0

    def rhs_cells(self, dims) -> np.ndarray:
        nx, ny = dims
        if np.isscalar(self.rhs):
            return np.full(nx * ny, float(self.rhs))
        f = np.asarray(self.rhs, dtype=float)
        if f.shape != (ny, nx):
            raise ValueError(f"rhs raster shape {f.shape} != fine dims ({ny}, {nx})")
        return f.ravel()


# -- degrees of freedom --------------------------------------------------------

@dataclass(frozen=True)
class DofMap:
    state: np.ndarray      # per node: FREE / CONSTRAINED / REMOVED
    free: np.ndarray       # node ids of free dofs, ascending
    index: np.ndarray      # node id -> free index, -1 if not free

    @property
    def n_free(self) -> int:
        return self.free.size


def build_dofmap(hier: GridHierarchy, active_mask: np.ndarray) -> DofMap:
    nx, ny = hier.fine_dims
    act = np.pad(np.asarray(active_mask, dtype=np.int8), 1)
    one = np.pad(np.ones((ny, nx), dtype=np.int8), 1)
    # node (i, j) touches cells (i-1..i, j-1..j)
    n_act = act[:-1, :-1] + act[:-1, 1:] + act[1:, :-1] + act[1:, 1:]
    n_all = one[:-1, :-1] + one[:-1, 1:] + one[1:, :-1] + one[1:, 1:]
    state = np.full((ny + 1, nx + 1), FREE, dtype=np.int8)
    state[0, :] = state[-1, :] = CONSTRAINED
    state[:, 0] = state[:, -1] = CONSTRAINED
    state[n_act < n_all] = CONSTRAINED
    state[n_act == 0] = REMOVED
    state = state.ravel()
    free = np.flatnonzero(state == FREE)
    index = np.full(state.size, -1, dtype=np.int64)
    index[free] = np.arange(free.size)
    return DofMap(state, free, index)


def free_boundary_nodes(neigh: Neighborhood, dofmap: DofMap) -> np.ndarray:
    """Edge nodes of the region that are globally free (Dirichlet data for local solves)."""
    nodes = neigh.fine_nodes[neigh.edge_mask]
    return nodes[dofmap.state[nodes] == FREE]


# -- sparse assembly -------------------------------------------------------------

def _cell_nodes(ix, iy, stride):
    n0 = iy * stride + ix
    return np.stack([n0, n0 + 1, n0 + stride + 1, n0 + stride], axis=1)


def _scatter(conn, elem, n) -> sp.csr_matrix:
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    return sp.csr_matrix((elem.ravel(), (rows, cols)), shape=(n, n))


def _region_cells(hier: GridHierarchy, active_mask, region: Neighborhood | None):
    nx, ny = hier.fine_dims
    if region is None:
        x0, x1, y0, y1 = 0, nx, 0, ny
    else:
        x0, x1, y0, y1 = region.rect
    iy, ix = np.mgrid[y0:y1, x0:x1]
    ix, iy = ix.ravel(), iy.ravel()
    keep = np.asarray(active_mask)[iy, ix]
    return ix[keep], iy[keep], (x0, y0, x1 - x0 + 1, (x1 - x0 + 1) * (y1 - y0 + 1))


def stiffness_matrix(hier: GridHierarchy, field: PermeabilityField,
                     region: Neighborhood | None = None) -> sp.csr_matrix:
    """a(u, v) = int kappa grad u . grad v over the active cells of a region.

    Indexed by all nodes of the region (or of the whole grid), constrained
    nodes included.
    """
    field.validate()
    ix, iy, (x0, y0, stride, n) = _region_cells(hier, field.active_mask, region)
    ed = element_data(*hier.h)
    kappa = field.values[iy, ix]
    elem = kappa[:, None, None] * ed.stiffness[None]
    return _scatter(_cell_nodes(ix - x0, iy - y0, stride), elem, n)


def tensor_stiffness_matrix(dims, h, tensors: np.ndarray, active=None) -> sp.csr_matrix:
    """Stiffness for a (ny, nx, 2, 2) field of per-cell tensors on an nx-by-ny grid."""
    nx, ny = dims
    iy, ix = np.mgrid[0:ny, 0:nx]
    ix, iy = ix.ravel(), iy.ravel()
    T = tensors.reshape(-1, 2, 2)
    if active is not None:
        keep = np.asarray(active).ravel()
        ix, iy, T = ix[keep], iy[keep], T[keep]
    elem = element_data(*h).tensor_stiffness(T)
    return _scatter(_cell_nodes(ix, iy, nx + 1), elem, (nx + 1) * (ny + 1))


def mass_matrix(hier: GridHierarchy, active_mask, region: Neighborhood | None = None,
                weights=None) -> sp.csr_matrix:
    ix, iy, (x0, y0, stride, n) = _region_cells(hier, active_mask, region)
    ed = element_data(*hier.h)
    if weights is None:
        elem = np.broadcast_to(ed.mass, (ix.size, 4, 4))
    else:
        elem = np.asarray(weights)[iy, ix][:, None, None] * ed.mass[None]
    return _scatter(_cell_nodes(ix - x0, iy - y0, stride), elem, n)


def load_vector(hier: GridHierarchy, spec: ProblemSpec, active_mask) -> np.ndarray:
    """int f v over active cells for every fine node."""
    f = spec.rhs_cells(hier.fine_dims).reshape(hier.fine_dims[1], hier.fine_dims[0])
    ix, iy, (_, _, stride, n) = _region_cells(hier, active_mask, None)
    hx, hy = hier.h
    conn = _cell_nodes(ix, iy, stride)
    vals = np.repeat(f[iy, ix] * (hx * hy / 4.0), 4)
    return np.bincount(conn.ravel(), weights=vals, minlength=n)


def assemble_stiffness(hier: GridHierarchy, field: PermeabilityField):
    """Global stiffness over free dofs and the dof map."""
    dofmap = build_dofmap(hier, field.active_mask)
    A = stiffness_matrix(hier, field)
    return A[dofmap.free][:, dofmap.free].tocsr(), dofmap


def assemble_load(hier: GridHierarchy, spec: ProblemSpec, dofmap: DofMap,
                  active_mask) -> np.ndarray:
    return load_vector(hier, spec, active_mask)[dofmap.free]


def assemble_mass(hier: GridHierarchy, active_mask, dofmap: DofMap) -> sp.csr_matrix:
    M = mass_matrix(hier, active_mask)
    return M[dofmap.free][:, dofmap.free].tocsr()


# -- partition of unity ------------------------------------------------------------

def hat_values(hier: GridHierarchy, level: int, vertex: int, region: Neighborhood) -> np.ndarray:
    """Level coarse hat chi_vertex at the region's nodes (exact integer arithmetic)."""
    vx, vy = hier.vertex_coords(level, vertex)
    sx, sy = hier.cell_size(level)
    i = np.arange(region.x0, region.x1 + 1)
    j = np.arange(region.y0, region.y1 + 1)
    fx = np.maximum(0, sx - np.abs(i - vx * sx)) / sx
    fy = np.maximum(0, sy - np.abs(j - vy * sy)) / sy
    return (fy[:, None] * fx[None, :]).ravel()


def hat_gradient_sq(hier: GridHierarchy, level: int, vertex: int,
                    region: Neighborhood) -> np.ndarray:
    """|grad chi|^2 at the Gauss points of every region cell, shape (ny_r, nx_r, 4)."""
    vx, vy = hier.vertex_coords(level, vertex)
    sx, sy = hier.cell_size(level)
    hx, hy = hier.h
    Hx, Hy = sx * hx, sy * hy
    ix = np.arange(region.x0, region.x1)
    iy = np.arange(region.y0, region.y1)
    # Gauss point positions in fine-cell units, shape (cells, 2)
    px = ix[:, None] + _GP[None, :]
    py = iy[:, None] + _GP[None, :]
    dx = px - vx * sx
    dy = py - vy * sy
    fx = np.maximum(0.0, 1.0 - np.abs(dx) / sx)
    fy = np.maximum(0.0, 1.0 - np.abs(dy) / sy)
    gx = np.where(np.abs(dx) < sx, -np.sign(dx) / Hx, 0.0)
    gy = np.where(np.abs(dy) < sy, -np.sign(dy) / Hy, 0.0)
    # gauss ordering matches GAUSS_POINTS: x fastest
    ddx = gx[None, :, None, :] * fy[:, None, :, None]
    ddy = fx[None, :, None, :] * gy[:, None, :, None]
    w = ddx ** 2 + ddy ** 2          # (ny_r, nx_r, 2[y], 2[x])
    return w.reshape(iy.size, ix.size, 4)


@dataclass
class PartitionOfUnity:
    level: int
    chi: sp.csc_matrix      # (n_nodes, n_vertices), column j = chi_j at fine nodes
    hier: GridHierarchy = field(repr=False)

    def local(self, vertex: int, region: Neighborhood) -> np.ndarray:
        return hat_values(self.hier, self.level, vertex, region)


def assemble_pou(hier: GridHierarchy, level: int) -> PartitionOfUnity:
    from .grid import neighborhood

    if level >= hier.level_count:
        raise ValueError("partition of unity requires a coarse level")
    rows, cols, vals = [], [], []
    for v in range(hier.vertex_count(level)):
        nb = neighborhood(hier, level, v)
        c = hat_values(hier, level, v, nb)
        nz = c > 0
        rows.append(nb.fine_nodes[nz])
        cols.append(np.full(nz.sum(), v))
        vals.append(c[nz])
    chi = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(hier.n_nodes, hier.vertex_count(level)))
    return PartitionOfUnity(level, chi, hier)


def assemble_weighted_mass(hier: GridHierarchy, neigh: Neighborhood, vertex: int,
                           field: PermeabilityField, level: int | None = None,
                           kappa_weighted: bool = False) -> sp.csr_matrix:
    """s(u, v) = int |grad chi_vertex|^2 u v over the region's active cells."""
    level = neigh.level if level is None else level
    w = hat_gradient_sq(hier, level, vertex, neigh)
    x0, x1, y0, y1 = neigh.rect
    act = field.active_mask[y0:y1, x0:x1]
    if kappa_weighted:
        w = w * field.values[y0:y1, x0:x1, None]
    iy, ix = np.nonzero(act)
    ed = element_data(*hier.h)
    elem = np.einsum("cq,qmn->cmn", w[iy, ix], ed.NN)
    return _scatter(_cell_nodes(ix, iy, x1 - x0 + 1), elem, neigh.n_nodes)


def local_submatrix(A_free: sp.spmatrix, dofmap: DofMap, neigh: Neighborhood):
    """Principal submatrix of a free-dof matrix on the region's free nodes.

    Returns ``(A_loc, local_pos, free_idx)``: positions within the region's
    node list and the corresponding global free-dof indices.
    """
    idx = dofmap.index[neigh.fine_nodes]
    local_pos = np.flatnonzero(idx >= 0)
    if local_pos.size == 0:
        raise DegenerateRegionError(
            f"region level {neigh.level} vertex {neigh.vertex} has no free dofs")
    free_idx = idx[local_pos]
    A = sp.csr_matrix(A_free)
    return A[free_idx][:, free_idx].tocsr(), local_pos, free_idx


# -- assembled fine problem -----------------------------------------------------------

@dataclass
class FineProblem:
    """Fine-grid system over free dofs: stiffness, load and mass."""

    hier: GridHierarchy
    field: PermeabilityField
    spec: ProblemSpec
    dofmap: DofMap
    A: sp.csr_matrix
    b: np.ndarray
    M: sp.csr_matrix

    @classmethod
    def build(cls, hier: GridHierarchy, field: PermeabilityField,
              spec: ProblemSpec | None = None) -> "FineProblem":
        if field.dims != hier.fine_dims:
            raise ValueError(f"field dims {field.dims} != grid dims {hier.fine_dims}")
        spec = ProblemSpec() if spec is None else spec
        A, dofmap = assemble_stiffness(hier, field)
        b = assemble_load(hier, spec, dofmap, field.active_mask)
        M = assemble_mass(hier, field.active_mask, dofmap)
        return cls(hier, field, spec, dofmap, A, b, M)

    def with_rhs(self, b: np.ndarray) -> "FineProblem":
        return FineProblem(self.hier, self.field, self.spec, self.dofmap, self.A,
                           np.asarray(b, dtype=float), self.M)

    def to_nodes(self, x: np.ndarray) -> np.ndarray:
        u = np.zeros(self.hier.n_nodes)
        u[self.dofmap.free] = x
        return u

    def from_nodes(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u)[self.dofmap.free]
