"""Local spectral decomposition, offline bases and the multilevel cascade."""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .assembly import (DofMap, PermeabilityField, assemble_weighted_mass, build_dofmap,
                       hat_values, stiffness_matrix)
from .errors import NumericalError
from .grid import GridHierarchy, Neighborhood, neighborhood, overlapping_neighborhoods
from .linalg import dense_gen_eig
from .snapshot import (RANDOMIZED, TRACE_EXHAUSTIVE, SnapshotSpace, iterated_snapshots,
                       random_snapshots)

log = logging.getLogger(__name__)


@dataclass
class OfflineSpace:
    level: int
    vertex: int
    region: Neighborhood
    eigenvalues: np.ndarray     # full ascending ladder
    raw_modes: np.ndarray       # eigenvectors in snapshot coordinates
    modes: np.ndarray           # snapshot-space functions before chi multiplication
    basis: np.ndarray           # chi * modes on region nodes
    active_count: int = 0
    flags: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return self.basis.shape[1]

    @property
    def active_basis(self) -> np.ndarray:
        return self.basis[:, :self.active_count]

    def next_eigenvalue(self):
        """lambda_{l+1} for the current active count, or None if exhausted."""
        if self.active_count < self.K:
            return float(self.eigenvalues[self.active_count])
        return None


def spectral_decompose(hier: GridHierarchy, field: PermeabilityField, snap: SnapshotSpace,
                       kappa_weighted: bool = False) -> OfflineSpace:
    """a(u, v) = lambda s(u, v) on the snapshot space; basis = chi * mode."""
    neigh = snap.region
    Psi = snap.columns
    if Psi.shape[1] == 0:
        z = np.zeros((neigh.n_nodes, 0))
        return OfflineSpace(neigh.level, neigh.vertex, neigh, np.zeros(0), np.zeros((0, 0)),
                            z, z, 0, list(snap.flags) + ["empty"])
    A = stiffness_matrix(hier, field, neigh)
    W = assemble_weighted_mass(hier, neigh, neigh.vertex, field, kappa_weighted=kappa_weighted)
    A_red = Psi.T @ (A @ Psi)
    S_red = Psi.T @ (W @ Psi)
    eig = dense_gen_eig(A_red, S_red)
    modes = Psi @ eig.vectors
    chi = hat_values(hier, neigh.level, neigh.vertex, neigh)
    return OfflineSpace(neigh.level, neigh.vertex, neigh, eig.values, eig.vectors, modes,
                        chi[:, None] * modes, 0, list(snap.flags))


def take_offline_basis(off: OfflineSpace, count: int) -> np.ndarray:
    """First ``count`` chi-multiplied modes; sets the active count."""
    if count < 0:
        raise ValueError("count must be non-negative")
    if count > off.K:
        warnings.warn(f"level {off.level} vertex {off.vertex}: {count} basis functions "
                      f"requested, snapshot space has {off.K}", RuntimeWarning, stacklevel=2)
        count = off.K
    off.active_count = count
    return off.basis[:, :count]


@dataclass(frozen=True)
class CascadeConfig:
    basis_counts: tuple          # N_1 .. N_{N-1}
    snapshot_count: int | None = None
    coarse_mode: str = TRACE_EXHAUSTIVE
    coarse_snapshot_count: int | None = None
    oversample: int = 4
    oversample_coarse: int = 0
    seed: int = 0
    kappa_weighted: bool = False

    def count(self, level: int) -> int:
        return int(self.basis_counts[level - 1])

    def random_count(self, level: int) -> int:
        if self.snapshot_count is not None:
            return int(self.snapshot_count)
        return 2 * self.count(level) + 8

    def coarse_count(self, level: int) -> int:
        if self.coarse_snapshot_count is not None:
            return int(self.coarse_snapshot_count)
        return 2 * self.count(level) + 8


@dataclass
class Cascade:
    hier: GridHierarchy
    field: PermeabilityField
    config: CascadeConfig
    dofmap: DofMap
    snapshots: dict = field(default_factory=dict)   # level -> {vertex: SnapshotSpace}
    offline: dict = field(default_factory=dict)     # level -> {vertex: OfflineSpace}

    @property
    def levels(self) -> range:
        return range(1, self.hier.level_count)

    def active_counts(self, level: int) -> dict:
        return {v: off.active_count for v, off in self.offline[level].items()}

    def dof(self, level: int) -> int:
        return sum(off.active_count for off in self.offline[level].values())

    def set_count(self, level: int, count: int) -> None:
        for off in self.offline[level].values():
            off.active_count = min(int(count), off.K)

    def level1_spaces(self) -> list:
        return [self.offline[1][v] for v in sorted(self.offline[1])]

    def dependents(self, level: int, vertices) -> set:
        """Level-(level-1) vertices whose snapshot pool uses any of ``vertices``."""
        vertices = set(int(v) for v in vertices)
        out = set()
        for m, snap in self.snapshots[level - 1].items():
            pool = overlapping_neighborhoods(self.hier, _work_region(self, snap.region), level)
            if vertices.intersection(pool.tolist()):
                out.add(m)
        return out

    def rebuild(self, level: int, vertices=None) -> None:
        """Regenerate snapshots and offline spaces at a coarse level (< N-1).

        Active counts are preserved, clipped to the new ladder length.
        """
        if level >= self.hier.level_count - 1:
            raise ValueError("the finest coarse level is built from fine-grid snapshots")
        cfg = self.config
        verts = sorted(self.offline[level]) if vertices is None else sorted(vertices)
        for m in verts:
            old = self.offline[level].get(m)
            keep = cfg.count(level) if old is None else old.active_count
            region = neighborhood(self.hier, level, m)
            snap = iterated_snapshots(self.hier, self.field, region, self.offline[level + 1],
                                      cfg.coarse_mode, cfg.coarse_count(level), cfg.seed,
                                      cfg.oversample_coarse, dofmap=self.dofmap)
            off = spectral_decompose(self.hier, self.field, snap, cfg.kappa_weighted)
            off.active_count = min(keep, off.K)
            self.snapshots[level][m] = snap
            self.offline[level][m] = off


def _work_region(cascade: Cascade, region: Neighborhood) -> Neighborhood:
    from .grid import oversample

    layers = cascade.config.oversample_coarse
    if not layers:
        return region
    sx, sy = cascade.hier.cell_size(region.level + 1)
    return oversample(region, (layers * sx, layers * sy))


def _decompose_level(cascade: Cascade, level: int, build_snapshot) -> None:
    hier, cfg = cascade.hier, cascade.config
    cascade.snapshots[level] = {}
    cascade.offline[level] = {}
    for v in range(hier.vertex_count(level)):
        region = neighborhood(hier, level, v)
        try:
            snap = build_snapshot(region)
            off = spectral_decompose(hier, cascade.field, snap, cfg.kappa_weighted)
        except NumericalError as exc:
            raise NumericalError(f"cascade failed at level {level} vertex {v}: {exc}") from exc
        off.active_count = min(cfg.count(level), off.K)
        cascade.snapshots[level][v] = snap
        cascade.offline[level][v] = off


def build_cascade(hier: GridHierarchy, field: PermeabilityField, config: CascadeConfig,
                  dofmap: DofMap | None = None) -> Cascade:
    """Initialization at level N-1, then spectral/snapshot iteration down to level 1."""
    N = hier.level_count
    if len(config.basis_counts) != N - 1:
        raise ValueError(f"{N}-level hierarchy needs {N - 1} basis counts, "
                         f"got {len(config.basis_counts)}")
    dofmap = build_dofmap(hier, field.active_mask) if dofmap is None else dofmap
    cascade = Cascade(hier, field, config, dofmap)
    top = N - 1
    log.info("level %d: random snapshots (%d per region)", top, config.random_count(top))
    _decompose_level(cascade, top, lambda region: random_snapshots(
        hier, field, region, config.random_count(top), config.seed, config.oversample, dofmap))
    for level in range(top - 1, 0, -1):
        log.info("level %d: %s snapshots", level, config.coarse_mode)
        finer = cascade.offline[level + 1]
        _decompose_level(cascade, level, lambda region, lv=level: iterated_snapshots(
            hier, field, region, finer, config.coarse_mode, config.coarse_count(lv),
            config.seed, config.oversample_coarse, dofmap=dofmap))
    return cascade


# -- serialization ---------------------------------------------------------------

def write_block(path, array: np.ndarray) -> None:
    """Binary block: little-endian int64 (rows, cols) header, then float64 row-major."""
    a = np.ascontiguousarray(np.atleast_2d(array), dtype="<f8")
    if np.asarray(array).ndim == 1:
        a = a.reshape(-1, 1)
    with open(path, "wb") as fh:
        fh.write(np.array(a.shape, dtype="<i8").tobytes())
        fh.write(a.tobytes())


def read_block(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    rows, cols = np.frombuffer(raw[:16], dtype="<i8")
    return np.frombuffer(raw[16:], dtype="<f8").reshape(int(rows), int(cols)).copy()


def save_cascade(cascade: Cascade, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    regions = []
    for level in sorted(cascade.offline):
        for v in sorted(cascade.offline[level]):
            snap = cascade.snapshots[level][v]
            off = cascade.offline[level][v]
            stem = f"L{level}_V{v}"
            write_block(d / f"{stem}_snap.bin", snap.columns)
            write_block(d / f"{stem}_modes.bin", off.raw_modes)
            regions.append({
                "level": level, "vertex": v,
                "rect": list(snap.region.rect), "layers": list(snap.region.layers),
                "provenance": snap.provenance, "flags": off.flags,
                "active_count": off.active_count,
                "eigenvalues": [float(x) for x in off.eigenvalues],
                "snapshots": f"{stem}_snap.bin", "modes": f"{stem}_modes.bin",
            })
    h = cascade.hier
    manifest = {
        "hierarchy": {"fine_dims": list(h.fine_dims),
                      "coarsening": [list(f) for f in h.coarsening],
                      "domain": list(h.domain)},
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in asdict(cascade.config).items()},
        "regions": regions,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return d


def load_cascade(directory, field: PermeabilityField) -> Cascade:
    from .grid import build_hierarchy

    d = Path(directory)
    man = json.loads((d / "manifest.json").read_text())
    hm = man["hierarchy"]
    hier = build_hierarchy(hm["fine_dims"], hm["coarsening"], hm["domain"])
    cfg = dict(man["config"])
    cfg["basis_counts"] = tuple(cfg["basis_counts"])
    config = CascadeConfig(**cfg)
    cascade = Cascade(hier, field, config, build_dofmap(hier, field.active_mask))
    for r in man["regions"]:
        level, v = r["level"], r["vertex"]
        x0, x1, y0, y1 = r["rect"]
        region = Neighborhood(level, v, x0, x1, y0, y1, hier.fine_dims, tuple(r["layers"]))
        Psi = read_block(d / r["snapshots"])
        raw = read_block(d / r["modes"])
        if Psi.shape[1] == 0:
            Psi = np.zeros((region.n_nodes, 0))
            raw = np.zeros((0, 0))
        modes = Psi @ raw
        chi = hat_values(hier, level, v, region)
        snap = SnapshotSpace(level, v, region, Psi, r["provenance"], list(r["flags"]))
        off = OfflineSpace(level, v, region, np.asarray(r["eigenvalues"], dtype=float), raw,
                           modes, chi[:, None] * modes, int(r["active_count"]), list(r["flags"]))
        cascade.snapshots.setdefault(level, {})[v] = snap
        cascade.offline.setdefault(level, {})[v] = off
    return cascade
