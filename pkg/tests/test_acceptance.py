"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``criterion N: PASS|FAIL ...`` line; the lines are
collected in RESULTS and repeated in the terminal summary by conftest.
"""
import shutil
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from mlgmsfem import cli, costmodel
from mlgmsfem.assembly import FineProblem, PermeabilityField
from mlgmsfem.config import apply_set, parse_config
from mlgmsfem.experiments import run_adapt, run_sweep
from mlgmsfem.generate import channel_field
from mlgmsfem.grid import build_hierarchy
from mlgmsfem.homogenize import reiterate_homogenize
from mlgmsfem.linalg import dense_gen_eig, gram_quadratic
from mlgmsfem.offline import CascadeConfig, build_cascade
from mlgmsfem.solver import References, level1_basis, solve_multiscale

from oracles import gen_eig_oracle, mc_sup, random_psd_instance

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
RESULTS = []


def report(n, ok, detail, elapsed, limit):
    ok = bool(ok) and elapsed < limit
    line = (f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}  "
            f"[{elapsed:.1f}s / {limit:g}s]")
    RESULTS.append(line)
    print(line)
    assert ok, line


def _e2(rows, label):
    sel = [r for r in rows if r["level_config"] == label]
    return {int(r["N1"]): float(r["e2"]) for r in sel}


def _strictly_decreasing(v):
    return all(b < a for a, b in zip(v, v[1:]))


def test_criterion_1_eigensolver_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_val, worst_res = 0.0, 0.0
    for _ in range(200):
        n = int(rng.integers(1, 13))
        X = rng.standard_normal((n, n))
        A = 0.5 * (X + X.T)                         # symmetric, indefinite
        Y = rng.standard_normal((n, n))
        S = Y @ Y.T + 0.1 * n * np.eye(n)
        e = dense_gen_eig(A, S)
        St = S + 1e-12 * np.trace(S) / n * np.eye(n)
        ref = gen_eig_oracle(A, St)
        scale = max(np.abs(ref).max(), 1e-300)
        worst_val = max(worst_val, np.abs(e.values - ref).max() / scale)
        res = np.abs(A @ e.vectors - St @ e.vectors * e.values).max()
        worst_res = max(worst_res, res / np.linalg.norm(A, 2))
    ok = worst_val <= 1e-8 and worst_res <= 1e-8
    report(1, ok, f"max rel eigenvalue gap {worst_val:.2e}, max residual/|A| {worst_res:.2e}",
           time.perf_counter() - t0, 10)


def test_criterion_2_residual_closed_form():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for i in range(50):
        d = int(rng.integers(2, 6))
        r, G = random_psd_instance(rng, d, d if i % 4 else d - 1)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            q = gram_quadratic(r, G)
        m = mc_sup(r, G, 100_000, rng)
        worst = max(worst, abs(m - q) / q)
    report(2, worst <= 0.02, f"max |MC sup - closed form| / closed form {worst:.2e}",
           time.perf_counter() - t0, 30)


def test_criterion_3_galerkin_exactness():
    t0 = time.perf_counter()
    kappa = channel_field((60, 60), 1e4, 6, inclusions=30, seed=2)
    field = PermeabilityField(kappa)
    errs = []
    for factors, counts in (([(6, 6), (10, 10)], (4,)), ([(3, 3), (4, 4), (5, 5)], (4, 4))):
        hier = build_hierarchy((60, 60), factors)
        fine = FineProblem.build(hier, field)
        cascade = build_cascade(hier, field, CascadeConfig(counts), fine.dofmap)
        Phi = level1_basis(cascade)
        u = Phi @ np.random.default_rng(0).standard_normal(Phi.shape[1])
        sol = solve_multiscale(cascade, fine.with_rhs(fine.A @ u), References(u))
        errs.append(sol.e2)
    report(3, max(errs) <= 1e-8, f"e2 2-level {errs[0]:.2e}, 3-level {errs[1]:.2e}",
           time.perf_counter() - t0, 30)


def test_criterion_4_two_level_trend():
    t0 = time.perf_counter()
    rows = run_sweep(parse_config(CONFIGS / "channels_2level.cfg"))
    e2 = _e2(rows, "L1+L2")
    ns = [1, 2, 4, 6, 8, 12]
    vals = [e2[n] for n in ns]
    ok = _strictly_decreasing(vals) and e2[8] < 0.5 * e2[2]
    report(4, ok, "e2 " + " ".join(f"N1={n}:{v:.4f}" for n, v in zip(ns, vals)),
           time.perf_counter() - t0, 300)


def test_criterion_5_multilevel_closeness():
    t0 = time.perf_counter()
    rows = run_sweep(parse_config(CONFIGS / "channels_3level.cfg"))
    two, three = _e2(rows, "L1+L3"), _e2(rows, "L1+L2+L3")
    ratios = {n: max(three[n] / two[n], two[n] / three[n]) for n in (2, 4, 8)}
    ok = max(ratios.values()) <= 1.25
    report(5, ok, "ratio " + " ".join(f"N1={n}:{r:.3f}" for n, r in ratios.items()),
           time.perf_counter() - t0, 600)


def _interp_loglog(x, xs, ys):
    return float(np.exp(np.interp(np.log(x), np.log(xs), np.log(ys))))


def test_criterion_6_adaptivity_dominance():
    t0 = time.perf_counter()
    cfg = parse_config(CONFIGS / "adapt.cfg")
    assert cfg.theta == 0.7 and cfg.max_iter >= 5
    hists = run_adapt(cfg)

    def curve(mode):
        recs = hists[mode].records
        dof = np.array([r.dofs[0] + r.dofs_added[1] for r in recs], dtype=float)
        err = np.array([r.errors["e2_snap"] for r in recs])
        return dof, err

    bd, be = curve("both")
    monotone = len(be) >= 6 and _strictly_decreasing(list(be))
    dominance, worst = True, 0.0
    for mode in ("level1", "level2"):
        md, me = curve(mode)
        order = np.argsort(md, kind="stable")
        md, me = md[order], me[order]
        lo, hi = max(bd[0], md[0]), min(bd[-1], md[-1])
        points = [x for x in np.concatenate([bd, md]) if lo <= x <= hi]
        for x in points:
            gap = _interp_loglog(x, bd, be) / _interp_loglog(x, md, me)
            worst = max(worst, gap)
            dominance &= gap <= 1 + 1e-12
    detail = ("both e2_snap " + " ".join(f"{v:.4f}" for v in be)
              + f"; max both/single at matched DOF {worst:.4f}")
    report(6, monotone and dominance, detail, time.perf_counter() - t0, 600)


def test_criterion_7_perforated_trend():
    t0 = time.perf_counter()
    rows = run_sweep(parse_config(CONFIGS / "perforated.cfg"))
    two, four = _e2(rows, "L1+L4"), _e2(rows, "L1+L2+L3+L4")
    ns = [1, 2, 4, 8, 16]
    ok = (_strictly_decreasing([two[n] for n in ns])
          and _strictly_decreasing([four[n] for n in ns]))
    ratios = [max(four[n] / two[n], two[n] / four[n]) for n in ns]
    ok = ok and max(ratios) <= 1.3
    detail = ("2-level " + " ".join(f"{two[n]:.4f}" for n in ns)
              + "; 4-level " + " ".join(f"{four[n]:.4f}" for n in ns)
              + f"; max ratio {max(ratios):.3f}")
    report(7, ok, detail, time.perf_counter() - t0, 900)


def test_criterion_8_homogenization_bounds():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    hier = build_hierarchy((24, 24), [(2, 2), (3, 3), (4, 4)])
    worst = 0.0
    for _ in range(50):
        kappa = 10 ** rng.uniform(0, rng.uniform(0.5, 4), (24, 24))
        res = reiterate_homogenize(hier, kappa)
        # bounds per level-1 and level-2 block from the fine cells it covers
        for level in (1, 2):
            sym = res.sym(level)
            nlx, nly = hier.level_dims(level)
            sx, sy = 24 // nlx, 24 // nly
            for by in range(nly):
                for bx in range(nlx):
                    k = kappa[by * sy:(by + 1) * sy, bx * sx:(bx + 1) * sx]
                    voigt, reuss = k.mean(), 1.0 / (1.0 / k).mean()
                    w = np.linalg.eigvalsh(sym[by, bx])
                    worst = max(worst, (reuss - w[0]) / reuss, (w[1] - voigt) / voigt)
    fixed = reiterate_homogenize(hier, np.full((24, 24), 3.7))
    fp = max(np.abs(fixed.tensors[l] - 3.7 * np.eye(2)).max() for l in (1, 2))
    ok = worst <= 1e-10 and fp <= 1e-12
    report(8, ok, f"max bound violation {worst:.2e}, constant fixed-point error {fp:.2e}",
           time.perf_counter() - t0, 60)


def test_criterion_9_cost_model():
    t0 = time.perf_counter()
    p = costmodel.CostParams.uniform(3, 100, 8, 4, 2, 1.5, 1.0)
    s = costmodel.speedup_ratio(p)
    rel = abs(s.raw - s.predicted) / s.predicted
    worst = 0.0
    for M in (2, 3, 4, 5):
        for C, r, lam, Mfac, alpha, beta in ((100, 8, 4, 2, 1.5, 1.0), (7, 5, 3, 1.5, 2.0, 0.5),
                                             (16, 12, 2, 3, 1.2, 1.2)):
            q = costmodel.CostParams.uniform(M, C, r, lam, Mfac, alpha, beta)
            direct = costmodel.op_count_multilevel(q)
            closed = costmodel.op_count_uniform_closed_form(M, C, r, lam, Mfac, alpha, beta)
            worst = max(worst, abs(direct - closed) / direct)
    ok = rel <= 0.25 and worst <= 1e-12
    report(9, ok, f"raw {s.raw:.4f} vs predicted {s.predicted:.4f} (rel {rel:.3f}); "
                  f"closed form rel gap {worst:.1e}", time.perf_counter() - t0, 1)


def test_criterion_10_determinism(tmp_path):
    t0 = time.perf_counter()
    cfg_path = tmp_path / "channels_2level.cfg"
    shutil.copy(CONFIGS / "channels_2level.cfg", cfg_path)
    shutil.copy(CONFIGS / "channels_200.txt", tmp_path / "channels_200.txt")
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        code = cli.main(["sweep", str(cfg_path), "--set", f"output={out}"])
        assert code == 0
        outs.append((out / "errors.csv").read_bytes())
    ok = outs[0] == outs[1] and len(outs[0]) > 0
    report(10, ok, f"errors.csv {len(outs[0])} bytes, identical={outs[0] == outs[1]}",
           time.perf_counter() - t0, 600)
