"""Two-sample effect statistics and the top-k feature ranking tables."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from .errors import ClassImbalanceDegenerate, DegenerateVariance
from .features.matrix import FeatureMatrix

DEFAULT_BONFERRONI_M = 195  # 65 features x 3 periods


def welch_t(a, b) -> tuple[float, float, float]:
    """Welch's unequal-variance t with Welch-Satterthwaite df.

    Returns (t, df, two-sided p); p comes from the regularized incomplete
    beta form of the t CDF.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise DegenerateVariance(f"need >= 2 samples per group, got {len(a)}/{len(b)}")
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    if va == 0 and vb == 0:
        if a.mean() == b.mean():
            return 0.0, float(len(a) + len(b) - 2), 1.0
        raise DegenerateVariance("both groups have zero variance")
    sa, sb = va / len(a), vb / len(b)
    se = np.sqrt(sa + sb)
    t = (a.mean() - b.mean()) / se
    df = (sa + sb) ** 2 / (sa**2 / (len(a) - 1) + sb**2 / (len(b) - 1))
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return float(t), float(df), p


def cohens_d(a, b) -> tuple[float, tuple[float, float]]:
    """Pooled-variance Cohen's d (absolute) with its large-sample 95% CI."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise DegenerateVariance(f"need >= 2 samples per group, got {na}/{nb}")
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    pooled = ((na - 1) * va + (nb - 1) * vb) / (na + nb - 2)
    if pooled == 0:
        raise DegenerateVariance("pooled variance is zero")
    d = abs(a.mean() - b.mean()) / np.sqrt(pooled)
    se = np.sqrt((na + nb) / (na * nb) + d * d / (2.0 * (na + nb)))
    return float(d), (float(d - 1.96 * se), float(d + 1.96 * se))


def bonferroni(p_values, m: int) -> list[float]:
    """p_adj = min(1, p*m)."""
    p_values = list(p_values)
    if m < len(p_values):
        raise ValueError(f"family size m={m} smaller than number of tests {len(p_values)}")
    return [min(1.0, p * m) for p in p_values]


def p_stars(p_adj: float) -> str:
    """Significance marks: * p<=0.05, ** p<=0.5, *** otherwise."""
    if p_adj <= 0.05:
        return "*"
    if p_adj <= 0.5:
        return "**"
    return "***"


@dataclass
class EffectRow:
    feature: str
    period: str
    direction: str            # '+' when high-label mean exceeds low-label mean
    t_stat: float
    p_adj: float
    cohens_d: float
    ci95: tuple[float, float]

    @property
    def ci_crosses_zero(self) -> bool:
        return self.ci95[0] <= 0.0 <= self.ci95[1]

    @property
    def ci_star(self) -> str:
        return "" if self.ci_crosses_zero else "*"


def effect_table(matrix: FeatureMatrix, trait: str, m: int | None = None) -> list[EffectRow]:
    """Per-feature Welch t and Cohen's d between high/low label groups."""
    y = matrix.label_column(trait)
    hi = np.flatnonzero(y == 1)
    lo = np.flatnonzero(y == 0)
    if len(hi) < 2 or len(lo) < 2:
        raise ClassImbalanceDegenerate(
            f"{trait}: need >= 2 instances per class, got {len(hi)}/{len(lo)}"
        )
    rows = []
    raw_p = []
    for j, name in enumerate(matrix.feature_names):
        a = matrix.X[hi, j]
        b = matrix.X[lo, j]
        try:
            t, _, p = welch_t(a, b)
            d, ci = cohens_d(a, b)
        except DegenerateVariance:
            continue
        rows.append(
            EffectRow(
                feature=name,
                period=matrix.feature_periods[j],
                direction="+" if a.mean() >= b.mean() else "-",
                t_stat=t,
                p_adj=p,  # corrected below
                cohens_d=d,
                ci95=ci,
            )
        )
        raw_p.append(p)
    family = m if m is not None else max(DEFAULT_BONFERRONI_M, len(raw_p))
    for row, p_adj in zip(rows, bonferroni(raw_p, family)):
        row.p_adj = p_adj
    return rows


def rank_effects(
    matrix: FeatureMatrix, trait: str, k: int = 5, m: int | None = None
) -> tuple[list[EffectRow], list[EffectRow]]:
    """Top-k rows by |t| and by Cohen's d; ties break on feature name."""
    rows = effect_table(matrix, trait, m=m)
    by_t = sorted(rows, key=lambda r: (-abs(r.t_stat), r.feature))[:k]
    by_d = sorted(rows, key=lambda r: (-r.cohens_d, r.feature))[:k]
    return by_t, by_d


def effects_csv(ranked: dict[str, tuple[list[EffectRow], list[EffectRow]]]) -> str:
    """Long-format CSV of the two ranked lists per trait."""
    lines = ["trait,ranking,rank,feature,period,direction,t,p_adj,p_adj_stars,d,ci_lo,ci_hi,ci_star"]
    for trait, (by_t, by_d) in ranked.items():
        for ranking, rows in (("t", by_t), ("d", by_d)):
            for i, r in enumerate(rows, start=1):
                lines.append(
                    f"{trait},{ranking},{i},{r.feature},{r.period or '-'},{r.direction},"
                    f"{r.t_stat:.4f},{r.p_adj:.6g},{p_stars(r.p_adj)},"
                    f"{r.cohens_d:.4f},{r.ci95[0]:.4f},{r.ci95[1]:.4f},{r.ci_star}"
                )
    return "\n".join(lines) + "\n"


def effects_markdown(ranked: dict[str, tuple[list[EffectRow], list[EffectRow]]]) -> str:
    """Markdown rendering: side-by-side t and d rankings, one block per trait."""
    out = ["# Feature effects per trait", ""]
    for trait, (by_t, by_d) in ranked.items():
        out.append(f"## {trait}")
        out.append("")
        out.append("| rank | feature (by t) | t | p stars | feature (by d) | d | ci |")
        out.append("|---|---|---|---|---|---|---|")
        for i in range(max(len(by_t), len(by_d))):
            lt = by_t[i] if i < len(by_t) else None
            ld = by_d[i] if i < len(by_d) else None
            left = (
                f"{lt.feature} ({lt.period or '-'}) | ({lt.direction}) {lt.t_stat:.2f} | {p_stars(lt.p_adj)}"
                if lt else " | | "
            )
            right = (
                f"{ld.feature} ({ld.period or '-'}) | {ld.cohens_d:.2f}{ld.ci_star} | "
                f"[{ld.ci95[0]:.2f}, {ld.ci95[1]:.2f}]"
                if ld else " | | "
            )
            out.append(f"| {i + 1} | {left} | {right} |")
        out.append("")
    return "\n".join(out) + "\n"
