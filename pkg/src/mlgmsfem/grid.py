"""Nested structured grid hierarchy, coarse neighborhoods and containment maps.

Levels are numbered 1 (coarsest) to N (the fine grid).  All ids are row-major
with x running fastest: fine cell ``(ix, iy)`` has id ``iy * nx + ix`` and fine
node ``(i, j)`` has id ``j * (nx + 1) + i``.  Level-l vertices follow the same
convention on the level-l vertex lattice.

A neighborhood is stored as a rectangle of fine cells ``[x0, x1) x [y0, y1)``;
every region the method touches (omega_{j,l}, oversampled omega^+) is such a
rectangle.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class GridHierarchy:
    fine_dims: tuple[int, int]
    coarsening: tuple[tuple[int, int], ...]
    domain: tuple[float, float] = (1.0, 1.0)

    @property
    def level_count(self) -> int:
        return len(self.coarsening)

    def level_dims(self, level: int) -> tuple[int, int]:
        """Number of level-``level`` cells in x and y."""
        self._check_level(level)
        nx = ny = 1
        for cx, cy in self.coarsening[:level]:
            nx *= cx
            ny *= cy
        return nx, ny

    def cell_size(self, level: int) -> tuple[int, int]:
        """Fine cells per level-``level`` cell, in x and y."""
        nx, ny = self.level_dims(level)
        return self.fine_dims[0] // nx, self.fine_dims[1] // ny

    @property
    def level_sizes(self) -> tuple[float, ...]:
        # H_l as a fraction of the domain edge (x direction)
        return tuple(1.0 / self.level_dims(l)[0] for l in range(1, self.level_count + 1))

    def mesh_size(self, level: int) -> tuple[float, float]:
        nx, ny = self.level_dims(level)
        return self.domain[0] / nx, self.domain[1] / ny

    @property
    def h(self) -> tuple[float, float]:
        return self.domain[0] / self.fine_dims[0], self.domain[1] / self.fine_dims[1]

    @property
    def n_cells(self) -> int:
        return self.fine_dims[0] * self.fine_dims[1]

    @property
    def n_nodes(self) -> int:
        return (self.fine_dims[0] + 1) * (self.fine_dims[1] + 1)

    def vertex_dims(self, level: int) -> tuple[int, int]:
        nx, ny = self.level_dims(level)
        return nx + 1, ny + 1

    def vertex_count(self, level: int) -> int:
        vx, vy = self.vertex_dims(level)
        return vx * vy

    def vertex_coords(self, level: int, vertex: int) -> tuple[int, int]:
        vx, vy = self.vertex_dims(level)
        if not 0 <= vertex < vx * vy:
            raise IndexError(f"vertex {vertex} out of range for level {level} ({vx * vy} vertices)")
        return vertex % vx, vertex // vx

    def vertex_id(self, level: int, ix: int, iy: int) -> int:
        return iy * self.vertex_dims(level)[0] + ix

    def node_coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        hx, hy = self.h
        nx, ny = self.fine_dims
        i = np.arange(nx + 1) * hx
        j = np.arange(ny + 1) * hy
        X, Y = np.meshgrid(i, j)
        return X.ravel(), Y.ravel()

    def cell_children(self, level: int, cell: int) -> np.ndarray:
        """Level-(level+1) cell ids making up a level-``level`` cell."""
        nx, _ = self.level_dims(level)
        cx, cy = self.coarsening[level]
        nxc, _ = self.level_dims(level + 1)
        ix, iy = cell % nx, cell // nx
        xs = np.arange(ix * cx, (ix + 1) * cx)
        ys = np.arange(iy * cy, (iy + 1) * cy)
        return (ys[:, None] * nxc + xs[None, :]).ravel()

    def _check_level(self, level: int) -> None:
        if not 1 <= level <= self.level_count:
            raise IndexError(f"level {level} outside 1..{self.level_count}")


def build_hierarchy(
    fine_dims: Sequence[int],
    coarsening_factors: Sequence[Sequence[int]],
    domain: Sequence[float] = (1.0, 1.0),
) -> GridHierarchy:
    """Build a nested hierarchy.

    ``coarsening_factors[0]`` splits the domain into level-1 cells and
    ``coarsening_factors[l]`` splits a level-l cell into level-(l+1) cells; the
    last level is the fine grid, so the factor product must equal ``fine_dims``.
    """
    fine = (int(fine_dims[0]), int(fine_dims[1]))
    factors = tuple((int(f[0]), int(f[1])) for f in coarsening_factors)
    if len(factors) < 2:
        raise ConfigError("a hierarchy needs at least two levels (two coarsening factors)")
    for l, (cx, cy) in enumerate(factors, start=1):
        if cx < 2 or cy < 2:
            raise ConfigError(f"level {l}: coarsening factors must be >= 2, got ({cx}, {cy})")
    if domain[0] <= 0 or domain[1] <= 0:
        raise ConfigError(f"domain extents must be positive, got {tuple(domain)}")
    nx, ny = fine
    for l in range(len(factors), 1, -1):
        cx, cy = factors[l - 1]
        if nx % cx or ny % cy:
            raise ConfigError(
                f"level {l}: {nx}x{ny} cells are not divisible by coarsening ({cx}, {cy})")
        nx //= cx
        ny //= cy
    if (nx, ny) != factors[0]:
        raise ConfigError(
            f"level 1: factors give {factors[0][0]}x{factors[0][1]} coarse cells "
            f"but the fine grid implies {nx}x{ny}")
    return GridHierarchy(fine, factors, (float(domain[0]), float(domain[1])))


def sub_hierarchy(hier: GridHierarchy, levels: Sequence[int]) -> GridHierarchy:
    """Hierarchy keeping only ``levels`` (must include 1 and N), merging factors."""
    levels = sorted(set(int(l) for l in levels))
    N = hier.level_count
    if levels[0] != 1 or levels[-1] != N:
        raise ConfigError(f"level subset must contain 1 and {N}, got {levels}")
    factors = []
    prev = 0
    for l in levels:
        cx = cy = 1
        for f in hier.coarsening[prev:l]:
            cx *= f[0]
            cy *= f[1]
        factors.append((cx, cy))
        prev = l
    return build_hierarchy(hier.fine_dims, factors, hier.domain)


@dataclass(frozen=True)
class Neighborhood:
    """A rectangular region of fine cells ``[x0, x1) x [y0, y1)``."""

    level: int
    vertex: int
    x0: int
    x1: int
    y0: int
    y1: int
    fine_dims: tuple[int, int]
    layers: tuple[int, int] = (0, 0)

    @property
    def rect(self) -> tuple[int, int, int, int]:
        return self.x0, self.x1, self.y0, self.y1

    @property
    def shape(self) -> tuple[int, int]:
        return self.x1 - self.x0, self.y1 - self.y0

    @property
    def node_shape(self) -> tuple[int, int]:
        return self.x1 - self.x0 + 1, self.y1 - self.y0 + 1

    @property
    def n_nodes(self) -> int:
        w, h = self.node_shape
        return w * h

    @cached_property
    def fine_cells(self) -> np.ndarray:
        nx = self.fine_dims[0]
        xs = np.arange(self.x0, self.x1)
        ys = np.arange(self.y0, self.y1)
        return (ys[:, None] * nx + xs[None, :]).ravel()

    @cached_property
    def fine_nodes(self) -> np.ndarray:
        """Global ids of all nodes in the closed rectangle, in local order."""
        stride = self.fine_dims[0] + 1
        xs = np.arange(self.x0, self.x1 + 1)
        ys = np.arange(self.y0, self.y1 + 1)
        return (ys[:, None] * stride + xs[None, :]).ravel()

    @cached_property
    def edge_mask(self) -> np.ndarray:
        """Local mask of nodes on the rectangle edge."""
        w, h = self.node_shape
        m = np.zeros((h, w), dtype=bool)
        m[0, :] = m[-1, :] = True
        m[:, 0] = m[:, -1] = True
        return m.ravel()

    @cached_property
    def domain_boundary_mask(self) -> np.ndarray:
        """Local mask of nodes lying on the global boundary."""
        nx, ny = self.fine_dims
        w, h = self.node_shape
        i = np.arange(self.x0, self.x1 + 1)
        j = np.arange(self.y0, self.y1 + 1)
        on = (i[None, :] == 0) | (i[None, :] == nx) | (j[:, None] == 0) | (j[:, None] == ny)
        return np.broadcast_to(on, (h, w)).ravel().copy()

    @property
    def boundary_nodes(self) -> np.ndarray:
        """Rectangle-edge nodes not on the global boundary.

        Perforation constraints are a property of the coefficient mask; filter
        them with :func:`mlgmsfem.assembly.free_boundary_nodes`.
        """
        return self.fine_nodes[self.edge_mask & ~self.domain_boundary_mask]

    @property
    def interior_local(self) -> np.ndarray:
        return np.flatnonzero(~self.edge_mask)

    def touches_domain_boundary(self) -> bool:
        nx, ny = self.fine_dims
        return self.x0 == 0 or self.y0 == 0 or self.x1 == nx or self.y1 == ny

    def contains(self, other: "Neighborhood") -> bool:
        return (self.x0 <= other.x0 and other.x1 <= self.x1
                and self.y0 <= other.y0 and other.y1 <= self.y1)

    def local_index(self, nodes: np.ndarray) -> np.ndarray:
        """Local indices of global ``nodes``; -1 where outside the rectangle."""
        stride = self.fine_dims[0] + 1
        i = nodes % stride
        j = nodes // stride
        inside = (i >= self.x0) & (i <= self.x1) & (j >= self.y0) & (j <= self.y1)
        out = np.full(nodes.shape, -1, dtype=np.int64)
        out[inside] = (j[inside] - self.y0) * (self.x1 - self.x0 + 1) + (i[inside] - self.x0)
        return out


def neighborhood(hier: GridHierarchy, level: int, vertex: int) -> Neighborhood:
    """omega_{vertex,level}: union of the level cells sharing the vertex."""
    if level >= hier.level_count:
        raise IndexError(f"neighborhoods are defined on coarse levels 1..{hier.level_count - 1}")
    vx, vy = hier.vertex_coords(level, vertex)
    sx, sy = hier.cell_size(level)
    nx, ny = hier.fine_dims
    return Neighborhood(
        level, vertex,
        max(0, (vx - 1) * sx), min(nx, (vx + 1) * sx),
        max(0, (vy - 1) * sy), min(ny, (vy + 1) * sy),
        hier.fine_dims,
    )


def neighborhoods(hier: GridHierarchy, level: int) -> list[Neighborhood]:
    return [neighborhood(hier, level, v) for v in range(hier.vertex_count(level))]


def oversample(neigh: Neighborhood, layers) -> Neighborhood:
    """Extend by ``layers`` fine-cell rings (int or (lx, ly)), clipped to the domain."""
    lx, ly = (layers, layers) if np.isscalar(layers) else layers
    if lx < 0 or ly < 0:
        raise ValueError("layers must be non-negative")
    nx, ny = neigh.fine_dims
    return Neighborhood(
        neigh.level, neigh.vertex,
        max(0, neigh.x0 - lx), min(nx, neigh.x1 + lx),
        max(0, neigh.y0 - ly), min(ny, neigh.y1 + ly),
        neigh.fine_dims,
        (neigh.layers[0] + lx, neigh.layers[1] + ly),
    )


def _vertex_range(lo: int, hi: int, size: int, count: int, strict: bool) -> np.ndarray:
    if strict:
        # vertices strictly inside (lo, hi)
        first = lo // size + 1
        last = -(-hi // size) - 1
    else:
        # vertices whose neighborhood meets the open interval (lo, hi)
        first = max(0, lo // size)
        last = min(count - 1, -(-hi // size))
    return np.arange(first, last + 1)


def contained_neighborhoods(hier: GridHierarchy, region: Neighborhood,
                            level: int | None = None) -> np.ndarray:
    """I_m: level-(l) vertices strictly inside the level-(l-1) region.

    Each returned vertex k satisfies omega_{k,l} contained in the region.
    """
    level = region.level + 1 if level is None else level
    sx, sy = hier.cell_size(level)
    vnx, vny = hier.vertex_dims(level)
    xs = _vertex_range(region.x0, region.x1, sx, vnx, strict=True)
    ys = _vertex_range(region.y0, region.y1, sy, vny, strict=True)
    return (ys[:, None] * vnx + xs[None, :]).ravel()


def overlapping_neighborhoods(hier: GridHierarchy, region: Neighborhood,
                              level: int | None = None) -> np.ndarray:
    """Level vertices whose neighborhood meets the interior of the region.

    For an aligned region this is every vertex of its closure; these are the
    offline spaces that can be restricted to the region.
    """
    level = region.level + 1 if level is None else level
    sx, sy = hier.cell_size(level)
    vnx, vny = hier.vertex_dims(level)
    xs = _vertex_range(region.x0, region.x1, sx, vnx, strict=False)
    ys = _vertex_range(region.y0, region.y1, sy, vny, strict=False)
    return (ys[:, None] * vnx + xs[None, :]).ravel()


def transfer_indices(src: Neighborhood, dst: Neighborhood) -> tuple[np.ndarray, np.ndarray]:
    """Local node indices shared by two rectangles, as (src_idx, dst_idx)."""
    x0, x1 = max(src.x0, dst.x0), min(src.x1, dst.x1)
    y0, y1 = max(src.y0, dst.y0), min(src.y1, dst.y1)
    if x0 > x1 or y0 > y1:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    xs = np.arange(x0, x1 + 1)
    ys = np.arange(y0, y1 + 1)
    sw = src.x1 - src.x0 + 1
    dw = dst.x1 - dst.x0 + 1
    s = ((ys[:, None] - src.y0) * sw + (xs[None, :] - src.x0)).ravel()
    d = ((ys[:, None] - dst.y0) * dw + (xs[None, :] - dst.x0)).ravel()
    return s, d
