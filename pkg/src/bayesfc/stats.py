"""Reproducibility, one-way ANOVA, and classification metrics."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .connectivity import ConnectivityMatrix
from .errors import DegenerateMarginals, DegenerateRanks, LengthMismatch


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of average-tie ranks."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"spearman needs equal-length 1-D inputs, got {x.shape} and {y.shape}")
    if len(x) < 3:
        raise LengthMismatch("spearman needs at least 3 observations")
    rx = rankdata(x) - (len(x) + 1) / 2
    ry = rankdata(y) - (len(y) + 1) / 2
    den = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if den == 0:
        raise DegenerateRanks("all-equal input has no rank variation")
    return float(np.clip((rx @ ry) / den, -1.0, 1.0))


def flatten_upper(cm: ConnectivityMatrix | np.ndarray) -> np.ndarray:
    w = cm.weights if isinstance(cm, ConnectivityMatrix) else np.asarray(cm)
    return w[np.triu_indices(w.shape[0], 1)]


def mean_pairwise_spearman(mats: Sequence[ConnectivityMatrix]) -> float:
    """All-pairs mean of Spearman correlations of flattened upper triangles."""
    vecs = [flatten_upper(m) for m in mats]
    vals = [spearman(a, b) for a, b in itertools.combinations(vecs, 2)]
    if not vals:
        raise LengthMismatch("need at least two matrices")
    return float(np.mean(vals))


def betainc_regularized(a: float, b: float, x: float, tol: float = 1e-12, max_iter: int = 10_000) -> float:
    """Regularized incomplete beta I_x(a, b) by Lentz's continued fraction."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    # the fraction converges fast only below the mean; use the symmetry otherwise
    if x > (a + 1) / (a + b + 2):
        return 1.0 - betainc_regularized(b, a, 1.0 - x, tol, max_iter)
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    tiny = 1e-300
    c, d = 1.0, 1.0 - (a + b) * x / (a + 1)
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        num = m * (b - m) * x / ((a + m2 - 1) * (a + m2))
        d = 1.0 + num * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + num / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1))
        d = 1.0 + num * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + num / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            break
    else:
        raise ArithmeticError("incomplete beta continued fraction did not converge")
    return math.exp(log_front) * h / a


def f_survival(f: float, df_between: int, df_within: int) -> float:
    if f <= 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    x = df_within / (df_within + df_between * f)
    return betainc_regularized(df_within / 2, df_between / 2, x)


@dataclass(frozen=True)
class AnovaResult:
    f_stat: float
    df_between: int
    df_within: int
    p_value: float
    zero_within_variance: bool = False

    def to_json(self) -> dict:
        return {
            "f": self.f_stat if math.isfinite(self.f_stat) else None,
            "df_between": self.df_between,
            "df_within": self.df_within,
            "p": self.p_value,
            "zero_within_variance": self.zero_within_variance,
        }


def one_way_anova(groups: Sequence[Sequence[float]]) -> AnovaResult:
    groups = [np.asarray(g, dtype=float) for g in groups]
    if len(groups) < 2 or any(len(g) < 2 for g in groups):
        raise LengthMismatch("ANOVA needs at least 2 groups of at least 2 values")
    k = len(groups)
    n = sum(len(g) for g in groups)
    grand = np.concatenate(groups).mean()
    ssb = float(sum(len(g) * (g.mean() - grand) ** 2 for g in groups))
    ssw = float(sum(((g - g.mean()) ** 2).sum() for g in groups))
    dfb, dfw = k - 1, n - k
    scale = max(float(np.abs(np.concatenate(groups)).max()), 1.0) ** 2 * n
    if ssw <= 1e-15 * scale:
        # F undefined: report p=0 (between-group spread present) or p=1 (nothing varies)
        if ssb <= 1e-15 * scale:
            return AnovaResult(0.0, dfb, dfw, 1.0, True)
        return AnovaResult(math.inf, dfb, dfw, 0.0, True)
    f = (ssb / dfb) / (ssw / dfw)
    return AnovaResult(f, dfb, dfw, f_survival(f, dfb, dfw))


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("confusion matrix must be square")
        if np.any(c < 0) or c.sum() < 1:
            raise ValueError("confusion counts must be non-negative with a positive total")
        object.__setattr__(self, "counts", c)

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_predictions(cls, y_true, y_pred, k: int) -> "ConfusionMatrix":
        c = np.zeros((k, k), dtype=np.int64)
        np.add.at(c, (np.asarray(y_true), np.asarray(y_pred)), 1)
        return cls(c)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


def per_class_rates(cm: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray]:
    c = cm.counts.astype(float)
    tp = np.diag(c)
    fn = c.sum(axis=1) - tp
    fp = c.sum(axis=0) - tp
    tn = c.sum() - tp - fn - fp
    with np.errstate(invalid="ignore", divide="ignore"):
        sens = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        spec = np.where(tn + fp > 0, tn / (tn + fp), 0.0)
    return sens, spec


def confusion_metrics(cm: ConfusionMatrix) -> tuple[float, float, float]:
    """(accuracy, macro sensitivity, macro specificity)."""
    sens, spec = per_class_rates(cm)
    acc = float(np.trace(cm.counts)) / cm.total
    return acc, float(sens.mean()), float(spec.mean())


def cohen_kappa(cm: ConfusionMatrix) -> float:
    c = cm.counts.astype(float)
    total = c.sum()
    p_o = np.trace(c) / total
    p_e = float((c.sum(axis=1) * c.sum(axis=0)).sum() / total**2)
    if p_e >= 1.0:
        raise DegenerateMarginals("expected agreement is 1; kappa undefined")
    return float((p_o - p_e) / (1.0 - p_e))


def metrics_report(cm: ConfusionMatrix) -> dict:
    acc, sens, spec = confusion_metrics(cm)
    try:
        kappa = cohen_kappa(cm)
    except DegenerateMarginals:
        kappa = None
    s, p = per_class_rates(cm)
    return {
        "accuracy": acc,
        "sensitivity": sens,
        "specificity": spec,
        "kappa": kappa,
        "per_class": {"sensitivity": s.tolist(), "specificity": p.tolist()},
        "confusion": cm.counts.tolist(),
    }
