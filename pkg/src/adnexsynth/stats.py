"""Paired significance testing and inter-observer agreement."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .image import ClassId, LabelMaskSet
from .metrics import dice

# (threshold, tier name), strictest first
SIGNIFICANCE_TIERS = ((0.001, "p<0.001"), (0.01, "p<0.01"), (0.05, "p<0.05"))
NOT_SIGNIFICANT = "ns"

_EPS = 1e-16
_TINY = 1e-300


def _beta_cf(a: float, b: float, x: float, max_iter: int = 10_000) -> float:
    """Continued fraction for I_x(a, b), modified Lentz evaluation."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float, complement: float | None = None) -> float:
    """Regularized incomplete beta function I_x(a, b).

    ``complement`` may supply 1 - x computed without cancellation.
    """
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a, b > 0")
    if not 0.0 <= x <= 1.0:
        raise ValueError("betainc needs 0 <= x <= 1")
    y = 1.0 - x if complement is None else complement
    if x == 0.0 or y == 0.0:
        return 0.0 if x == 0.0 else 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log(y))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, y) / b


def t_sf_two_sided(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("df must be positive")
    if math.isinf(t):
        return 0.0
    t2 = t * t
    return betainc(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2))


def t_cdf(t: float, df: float) -> float:
    tail = 0.5 * t_sf_two_sided(t, df)
    return 1.0 - tail if t >= 0 else tail


def significance_tier(p: float) -> str:
    for threshold, name in SIGNIFICANCE_TIERS:
        if p < threshold:
            return name
    return NOT_SIGNIFICANT


@dataclass(frozen=True)
class PairedTestResult:
    n: int
    mean_diff: float
    t_statistic: float
    p_value: float
    significance: str
    degenerate: bool = False

    def to_json(self, metric: str | None = None, cls: str | None = None) -> dict:
        out = {}
        if metric is not None:
            out["metric"] = metric
        if cls is not None:
            out["class"] = cls
        out.update(n=self.n, mean_diff=self.mean_diff, t=self.t_statistic, p=self.p_value,
                   significance_tier=self.significance, degenerate=self.degenerate)
        return out


def paired_t_test(scores_a: Sequence[float], scores_b: Sequence[float]) -> PairedTestResult:
    """Two-sided paired t-test on per-image scores of two models."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-D and of equal length")
    n = a.size
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return PairedTestResult(n, 0.0, 0.0, 1.0, NOT_SIGNIFICANT, degenerate=True)
        t = math.copysign(math.inf, mean)
        return PairedTestResult(n, mean, t, 0.0, significance_tier(0.0), degenerate=True)
    t = mean / (sd / math.sqrt(n))
    p = min(1.0, max(0.0, t_sf_two_sided(t, n - 1)))
    return PairedTestResult(n, mean, t, p, significance_tier(p))


# --- agreement ------------------------------------------------------------

def kappa_from_table(table) -> float:
    """Cohen's kappa from a 2x2 table ``[[yes/yes, yes/no], [no/yes, no/no]]``."""
    t = np.asarray(table, dtype=np.float64)
    if t.shape != (2, 2) or np.any(t < 0):
        raise ValueError("expected a 2x2 table of non-negative counts")
    total = t.sum()
    if total == 0:
        raise ValueError("empty contingency table")
    p_o = np.trace(t) / total
    rows, cols = t.sum(axis=1) / total, t.sum(axis=0) / total
    p_e = float(rows @ cols)
    if p_e == 1.0:
        # both raters constant and identical
        return 1.0
    return float((p_o - p_e) / (1.0 - p_e))


def contingency(rater_a: Sequence[bool], rater_b: Sequence[bool]) -> np.ndarray:
    a = np.asarray(rater_a, dtype=bool)
    b = np.asarray(rater_b, dtype=bool)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise ValueError("ratings must be non-empty 1-D sequences of equal length")
    return np.array([[np.sum(a & b), np.sum(a & ~b)], [np.sum(~a & b), np.sum(~a & ~b)]])


def cohens_kappa(rater_a: Sequence[bool], rater_b: Sequence[bool]) -> float:
    return kappa_from_table(contingency(rater_a, rater_b))


def degenerate_marginals(rater_a: Sequence[bool], rater_b: Sequence[bool]) -> bool:
    """True when chance agreement is 1 and kappa is fixed by convention."""
    t = contingency(rater_a, rater_b)
    return bool(t[0, 1] == 0 and t[1, 0] == 0 and (t[0, 0] == 0 or t[1, 1] == 0))


@dataclass(frozen=True)
class PairAgreement:
    observers: tuple[str, str]
    cls: ClassId
    dsc_mean: float
    dsc_variance: float
    disagreement_rate: float
    kappa: float
    degenerate: bool


def observer_agreement(observers: Mapping[str, Mapping[str, LabelMaskSet]],
                       classes: Sequence[ClassId] = tuple(ClassId)) -> list[PairAgreement]:
    """Pairwise DSC (mean, sample variance), presence disagreement and kappa.

    ``observers`` maps an observer name to ``{image_id: masks}``; every observer
    must annotate the same images.
    """
    names = list(observers)
    ids = list(observers[names[0]]) if names else []
    for name in names[1:]:
        if set(observers[name]) != set(ids):
            raise KeyError(f"observer {name!r} annotated a different image set")
    out = []
    for a, b in itertools.combinations(names, 2):
        for cls in classes:
            ga = [observers[a][i][cls] for i in ids]
            gb = [observers[b][i][cls] for i in ids]
            dscs = np.array([dice(x, y) for x, y in zip(ga, gb)])
            pres_a = [bool(m.any()) for m in ga]
            pres_b = [bool(m.any()) for m in gb]
            var = float(dscs.var(ddof=1)) if dscs.size > 1 else 0.0
            disagree = float(np.mean(np.asarray(pres_a) != np.asarray(pres_b)))
            out.append(PairAgreement((a, b), cls, float(dscs.mean()), var, disagree,
                                     cohens_kappa(pres_a, pres_b), degenerate_marginals(pres_a, pres_b)))
    return out
