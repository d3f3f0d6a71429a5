"""Experiment drivers behind the command line: sweeps, adaptivity, baselines."""
from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adaptive import MODES, enrich_loop
from .assembly import FineProblem, PermeabilityField, ProblemSpec
from .config import ExperimentConfig
from .errors import ConfigError
from .generate import channel_field, perforation_mask
from .grid import GridHierarchy
from .offline import Cascade, CascadeConfig, build_cascade
from .raster import read_raster
from .solver import References, solve_fine, solve_multiscale, solve_snapshot_reference

log = logging.getLogger(__name__)

SWEEP_HEADER = ["level_config", "N1", "N2", "N3", "DOF", "e1", "e2", "e1_snap", "e2_snap"]
ADAPT_HEADER = ["mode", "iteration", "DOF1", "DOF2", "DOF2_added", "e2_snap", "e1_snap",
                "e2", "e1", "eta_sq_sum", "marked_level1", "marked_level2"]


def _fmt(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row.get(k)) for k in header])


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def load_field(cfg: ExperimentConfig) -> PermeabilityField:
    nx, ny = cfg.fine_dims
    if cfg.kappa == "channels":
        values = channel_field((nx, ny), cfg.contrast, cfg.channel_spacing,
                               inclusions=cfg.inclusions, seed=cfg.field_seed)
    else:
        try:
            values = np.full((ny, nx), float(cfg.kappa))
        except ValueError:
            values = read_raster(cfg.resolve(cfg.kappa))
    if cfg.mask == "none":
        mask = None
    elif cfg.mask == "circles":
        mask, porosity = perforation_mask((nx, ny), cfg.perf_count, cfg.perf_radius,
                                          cfg.perf_seed)
        log.info("perforations: porosity %.4f", porosity)
    else:
        mask = read_raster(cfg.resolve(cfg.mask)) != 0
    field = PermeabilityField(values, mask)
    if field.dims != (nx, ny):
        raise ConfigError(f"kappa/mask rasters are {field.dims}, config says {(nx, ny)}")
    return field


def load_spec(cfg: ExperimentConfig) -> ProblemSpec:
    try:
        return ProblemSpec(float(cfg.f))
    except ValueError:
        return ProblemSpec(read_raster(cfg.resolve(cfg.f)))


@dataclass
class Setup:
    cfg: ExperimentConfig
    hier: GridHierarchy
    field: PermeabilityField
    fine: FineProblem
    u_h: np.ndarray

    @classmethod
    def from_config(cls, cfg: ExperimentConfig, hier: GridHierarchy | None = None) -> "Setup":
        hier = cfg.hierarchy() if hier is None else hier
        field = load_field(cfg)
        fine = FineProblem.build(hier, field, load_spec(cfg))
        u_h = solve_fine(hier, field, method=cfg.fine_solver, fine=fine)
        return cls(cfg, hier, field, fine, u_h)

    def for_levels(self, levels) -> "Setup":
        hier = self.cfg.sub(levels)
        return Setup(self.cfg, hier, self.field, self.fine, self.u_h)


def cascade_config(cfg: ExperimentConfig, counts) -> CascadeConfig:
    return CascadeConfig(tuple(int(c) for c in counts), cfg.snapshot_count, cfg.snapshot_mode,
                         cfg.coarse_snapshot_count, cfg.oversample, cfg.oversample_coarse,
                         cfg.seed, cfg.kappa_weighted)


def references(setup: Setup, cascade: Cascade) -> References:
    kind = setup.cfg.snap_reference
    if kind == "none":
        return References(setup.u_h, None)
    count = None
    if kind == "fine" and setup.hier.level_count > 2:
        count = setup.cfg.reference_snapshots
    return References(setup.u_h, solve_snapshot_reference(cascade, setup.fine, kind, count))


def run_solve(setup: Setup):
    cfg = setup.cfg
    cascade = build_cascade(setup.hier, setup.field, cascade_config(cfg, cfg.counts),
                            setup.fine.dofmap)
    sol = solve_multiscale(cascade, setup.fine, references(setup, cascade))
    return cascade, sol


def _level_list(cfg: ExperimentConfig):
    return cfg.level_configs or (tuple(range(1, cfg.levels + 1)),)


def run_sweep(cfg: ExperimentConfig, setup: Setup | None = None, out=None) -> list:
    """errors.csv rows over level configurations, N1 and intermediate counts."""
    setup = Setup.from_config(cfg) if setup is None else setup
    n1_list = cfg.sweep_n1 or (cfg.counts[0],)
    deeper = {2: cfg.sweep_n2, 3: cfg.sweep_n3}
    rows = []
    for levels in _level_list(cfg):
        sub = setup.for_levels(levels) if len(levels) != cfg.levels else setup
        inner = levels[1:-1]                      # original ids of intermediate levels
        lists = [deeper.get(l) or (cfg.counts[l - 1],) for l in inner]
        counts = (max(n1_list),) + tuple(max(v) for v in lists)
        cascade = build_cascade(sub.hier, sub.field, cascade_config(cfg, counts),
                                sub.fine.dofmap)
        refs = references(sub, cascade)
        label = "+".join(f"L{l}" for l in levels)
        for combo in _product(lists):
            _set_inner(cascade, combo)
            for n1 in n1_list:
                cascade.set_count(1, n1)
                sol = solve_multiscale(cascade, sub.fine, refs)
                named = dict(zip(inner, combo))
                rows.append({"level_config": label, "N1": n1,
                             "N2": named.get(2, ""), "N3": named.get(3, ""),
                             "DOF": sol.dof_counts[0], **sol.errors})
                log.info("%s N1=%d %s e2=%.4g", label, n1, combo, sol.e2)
    if out is not None:
        write_csv(out, SWEEP_HEADER, rows)
    return rows


def _product(lists):
    if not lists:
        yield ()
        return
    for head in lists[0]:
        for tail in _product(lists[1:]):
            yield (head,) + tail


def _set_inner(cascade: Cascade, combo) -> None:
    """Set intermediate counts and regenerate coarser levels if anything changed."""
    deepest_changed = 0
    for level, n in zip(range(2, 2 + len(combo)), combo):
        if any(off.active_count != min(n, off.K) for off in cascade.offline[level].values()):
            cascade.set_count(level, n)
            deepest_changed = level
    for level in range(deepest_changed - 1, 0, -1):
        cascade.rebuild(level)


def run_adapt(cfg: ExperimentConfig, setup: Setup | None = None, out=None,
              modes=MODES) -> dict:
    """Enrichment histories for each mode, all from the same initial cascade."""
    setup = Setup.from_config(cfg) if setup is None else setup
    base = build_cascade(setup.hier, setup.field, cascade_config(cfg, cfg.counts),
                         setup.fine.dofmap)
    refs = references(setup, base)
    histories, rows = {}, []
    for mode in modes:
        cascade = copy.deepcopy(base)
        hist = enrich_loop(cascade, setup.fine, refs, cfg.theta, cfg.tol, cfg.max_iter, mode,
                           cfg.decay_threshold)
        histories[mode] = hist
        for r in hist.records:
            rows.append({"mode": mode, "iteration": r.iteration,
                         "DOF1": r.dofs[0], "DOF2": r.dofs[1] if len(r.dofs) > 1 else 0,
                         "DOF2_added": r.dofs_added[1] if len(r.dofs) > 1 else 0,
                         **r.errors, "eta_sq_sum": r.eta_sq_sum,
                         "marked_level1": len(r.marked.get(1, [])),
                         "marked_level2": len(r.marked.get(2, []))})
    if out is not None:
        write_csv(out, ADAPT_HEADER, rows)
    return histories


def output_dir(cfg: ExperimentConfig) -> Path:
    d = Path(cfg.output)
    d.mkdir(parents=True, exist_ok=True)
    return d
