"""Command line entry point: ``mlgmsfem <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import costmodel
from .config import apply_set, parse_config
from .errors import ConfigError, NumericalError, ParameterError
from .experiments import (SWEEP_HEADER, Setup, output_dir, run_adapt, run_solve, run_sweep,
                          write_csv)
from .generate import channel_field, perforation_mask
from .homogenize import reiterate_homogenize, solve_homogenized, write_tensor_csv
from .raster import write_raster
from .solver import compute_errors

log = logging.getLogger("mlgmsfem")


def _load(args):
    return apply_set(parse_config(args.config), args.set)


def cmd_solve(args):
    cfg = _load(args)
    setup = Setup.from_config(cfg)
    cascade, sol = run_solve(setup)
    out = output_dir(cfg)
    row = {"level_config": "+".join(f"L{l}" for l in range(1, cfg.levels + 1)),
           "N1": cfg.counts[0], "N2": cfg.counts[1] if len(cfg.counts) > 1 else "",
           "N3": cfg.counts[2] if len(cfg.counts) > 2 else "", "DOF": sol.dof_counts[0],
           **sol.errors}
    write_csv(out / "errors.csv", SWEEP_HEADER, [row])
    nx, ny = cfg.fine_dims
    write_raster(setup.fine.to_nodes(sol.fine_field).reshape(ny + 1, nx + 1),
                 out / "solution.txt")
    print(f"DOF {sol.dof_counts}  e1 {sol.e1:.6g}  e2 {sol.e2:.6g}")


def cmd_sweep(args):
    cfg = _load(args)
    out = output_dir(cfg)
    rows = run_sweep(cfg, out=out / "errors.csv")
    print(f"{len(rows)} rows -> {out / 'errors.csv'}")


def cmd_adapt(args):
    cfg = _load(args)
    out = output_dir(cfg)
    hists = run_adapt(cfg, out=out / "adapt.csv")
    for mode, h in hists.items():
        last = h.records[-1]
        print(f"{mode:7s} {h.status:10s} DOF {last.dofs} e2_snap "
              f"{last.errors.get('e2_snap', np.nan):.6g}")


def cmd_homogenize(args):
    cfg = _load(args)
    setup = Setup.from_config(cfg)
    res = reiterate_homogenize(setup.hier, setup.field.values, setup.field.active_mask)
    out = output_dir(cfg)
    write_tensor_csv(res.tensors[1], out / "tensors.csv")
    hs = solve_homogenized(setup.hier, res.tensors[1], setup.fine, setup.u_h)
    print(f"homogenized  e1 {hs.errors['e1']:.6g}  e2 {hs.errors['e2']:.6g}")


def cmd_cost(args):
    M = args.levels
    p = costmodel.CostParams.uniform(M, args.C, args.r, args.lam, args.Mfac, args.alpha,
                                     args.beta)
    print(costmodel.format_table(p))


def cmd_gen_perf(args):
    mask, porosity = perforation_mask(tuple(args.dims), args.count, tuple(args.radius),
                                      args.seed)
    write_raster(mask.astype(float), args.out)
    print(f"porosity {porosity:.6f} -> {args.out}")


def cmd_gen_field(args):
    kappa = channel_field(tuple(args.dims), args.contrast, args.spacing,
                          inclusions=args.inclusions, seed=args.seed)
    write_raster(kappa, args.out)
    print(f"kappa in [{kappa.min():g}, {kappa.max():g}] -> {args.out}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mlgmsfem", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    for name, fn, help_ in (("solve", cmd_solve, "one multiscale solve"),
                            ("sweep", cmd_sweep, "error table over basis counts"),
                            ("adapt", cmd_adapt, "adaptive enrichment, three modes"),
                            ("homogenize", cmd_homogenize, "re-iterated homogenization")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.set_defaults(func=fn)

    p = sub.add_parser("cost", help="operation-count model")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--C", type=float, default=100)
    p.add_argument("--r", type=float, default=8)
    p.add_argument("--lam", type=float, default=4)
    p.add_argument("--Mfac", type=float, default=2)
    p.add_argument("--alpha", type=float, default=1.5)
    p.add_argument("--beta", type=float, default=1.0)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("gen-perf", help="seeded circular perforation mask")
    p.add_argument("--dims", type=int, nargs=2, required=True, metavar=("NX", "NY"))
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--radius", type=float, nargs=2, default=(2.0, 4.0), metavar=("RMIN", "RMAX"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_perf)

    p = sub.add_parser("gen-field", help="seeded channelized high-contrast field")
    p.add_argument("--dims", type=int, nargs=2, required=True, metavar=("NX", "NY"))
    p.add_argument("--contrast", type=float, default=1e4)
    p.add_argument("--spacing", type=int, default=10)
    p.add_argument("--inclusions", type=int, default=150)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_field)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
