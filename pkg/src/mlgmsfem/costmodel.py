"""Operation-count model for two-level vs. multilevel basis construction.

L(n) = n**alpha models a local solve with n unknowns and P(r, lam) = lam * r**beta
the local eigenproblem; constants are 1 since only ratios matter.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import prod

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class CostParams:
    C: tuple            # coarsening numbers C_1..C_M
    r: tuple            # snapshot counts r_1..r_{M-1}
    lam: tuple          # selected basis counts lambda_1..lambda_{M-1}
    Mfac: tuple         # oversampling / structure factors M_1..M_{M-1}
    alpha: float = 1.5
    beta: float = 1.0

    @property
    def levels(self) -> int:
        return len(self.C)

    @property
    def N(self) -> int:
        return prod(self.C)

    def lam_at(self, i: int) -> float:
        """lambda_i (1-based); the deepest level has no further reduction."""
        return 1.0 if i >= self.levels else float(self.lam[i - 1])

    @classmethod
    def uniform(cls, levels: int, C, r, lam, Mfac, alpha=1.5, beta=1.0):
        k = levels - 1
        return cls((C,) * levels, (r,) * k, (lam,) * k, (Mfac,) * k, alpha, beta)

    def validate(self) -> None:
        M = self.levels
        if M < 2:
            raise ParameterError("need at least 2 levels")
        for name, seq in (("r", self.r), ("lam", self.lam), ("Mfac", self.Mfac)):
            if len(seq) != M - 1:
                raise ParameterError(f"{name} needs {M - 1} entries, got {len(seq)}")
        vals = list(self.C) + list(self.r) + list(self.lam) + list(self.Mfac)
        if any(not v > 0 for v in vals):
            raise ParameterError("all counts must be positive")
        if not self.alpha >= self.beta >= 0:
            raise ParameterError(f"need alpha >= beta >= 0, got alpha={self.alpha}, "
                                 f"beta={self.beta}")
        for i in range(1, M):
            if not self.r[i - 1] >= self.lam[i - 1]:
                raise ParameterError(f"level {i}: need r_{i} >= lambda_{i} "
                                     f"({self.r[i - 1]} < {self.lam[i - 1]})")
            if not self.Mfac[i - 1] * self.C[i] > self.r[i - 1]:
                raise ParameterError(f"level {i}: need M_{i} C_{i + 1} > r_{i} "
                                     f"({self.Mfac[i - 1] * self.C[i]} <= {self.r[i - 1]})")


def op_count_two_level(p: CostParams) -> float:
    """C_1 r_1 L(M_1 prod_{i>1} C_i) + P(r_1, lambda_1)."""
    p.validate()
    n = p.Mfac[0] * prod(p.C[1:])
    return p.C[0] * p.r[0] * n ** p.alpha + p.lam[0] * p.r[0] ** p.beta


def op_count_multilevel(p: CostParams) -> float:
    """sum_j (prod_{i<=j} C_i) r_j L(lambda_{j+1} M_j C_{j+1}) + P(r_j, lambda_j)."""
    p.validate()
    total = 0.0
    for j in range(1, p.levels):
        blocks = prod(p.C[:j])
        n = p.lam_at(j + 1) * p.Mfac[j - 1] * p.C[j]
        total += blocks * p.r[j - 1] * n ** p.alpha + p.lam[j - 1] * p.r[j - 1] ** p.beta
    return total


def op_count_uniform_closed_form(levels: int, C, r, lam, Mfac, alpha, beta) -> float:
    """Closed form of the multilevel count for uniform parameters."""
    M = levels
    geo = (C ** (M - 2) - 1) / (C - 1) if C != 1 else float(M - 2)
    main = r * Mfac ** alpha * C ** alpha * C * (lam ** alpha * geo + C ** (M - 2))
    return main + (M - 1) * lam * r ** beta


@dataclass
class SpeedupRatio:
    raw: float
    predicted: float
    asymptotic_regime: bool     # C > lambda**alpha


def speedup_ratio(p: CostParams) -> SpeedupRatio:
    """Raw quotient O_2 / O_M and the predicted C**((M-2)(alpha-1))."""
    raw = op_count_two_level(p) / op_count_multilevel(p)
    C = float(np.exp(np.mean(np.log(p.C))))
    lam = float(np.exp(np.mean(np.log(p.lam))))
    predicted = C ** ((p.levels - 2) * (p.alpha - 1))
    return SpeedupRatio(raw, predicted, C > lam ** p.alpha)


def format_table(p: CostParams) -> str:
    s = speedup_ratio(p)
    lines = [f"{'level':>5} {'C':>8} {'r':>8} {'lambda':>8} {'M':>8}"]
    for i in range(1, p.levels + 1):
        if i < p.levels:
            lines.append(f"{i:>5} {p.C[i - 1]:>8g} {p.r[i - 1]:>8g} {p.lam[i - 1]:>8g} "
                         f"{p.Mfac[i - 1]:>8g}")
        else:
            lines.append(f"{i:>5} {p.C[i - 1]:>8g} {'-':>8} {'-':>8} {'-':>8}")
    lines.append(f"alpha = {p.alpha:g}, beta = {p.beta:g}, N = {p.N}")
    lines.append(f"O_2 = {op_count_two_level(p):.6g}")
    lines.append(f"O_M = {op_count_multilevel(p):.6g}")
    lines.append(f"raw ratio O_2/O_M = {s.raw:.6g}")
    lines.append(f"predicted C^((M-2)(alpha-1)) = {s.predicted:.6g}"
                 + ("" if s.asymptotic_regime else "  (C <= lambda^alpha: outside regime)"))
    return "\n".join(lines)
