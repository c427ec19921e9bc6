"""Decision procedures and error metrics.

All step-up rules share one ordering convention: values sort ascending with
ties broken by position (stable sort), so decisions are deterministic. The
LIS-style rules reject the k smallest values where k is the largest index at
which the running mean stays at or below the target level; BH compares order
statistics to the classic linear thresholds.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import emission


@dataclass(frozen=True)
class DecisionConfig:
    """Target FDR level and procedure name."""

    fdr_level: float
    procedure: str = "LIS"

    _PROCEDURES = ("LIS", "SLIS", "PLIS", "BH", "LFDR", "CLFDR")

    def __post_init__(self):
        if not 0.0 < self.fdr_level < 1.0:
            raise ValueError(f"fdr_level must be in (0, 1), got {self.fdr_level}")
        if self.procedure not in self._PROCEDURES:
            raise ValueError(f"unknown procedure {self.procedure!r}")


@dataclass
class DecisionResult:
    """Rejection set of one procedure run.

    ``rejected`` follows the input order (concatenated across groups for the
    pooled/separate variants, with ``group_sizes`` recording the split);
    ``threshold`` is the largest statistic value among rejections, NaN when
    nothing is rejected.
    """

    rejected: np.ndarray
    k: int
    threshold: float
    group_sizes: Optional[tuple] = None

    def by_group(self):
        if self.group_sizes is None:
            return [self.rejected]
        return np.split(self.rejected, np.cumsum(self.group_sizes)[:-1])


def _check_alpha(alpha: float):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")


def _stepup_count(sorted_vals: np.ndarray, thresholds: np.ndarray) -> int:
    """Largest k with sorted_vals[k-1] criterion satisfied, else 0."""
    qualifying = np.flatnonzero(sorted_vals <= thresholds)
    return int(qualifying[-1]) + 1 if qualifying.size else 0


def lis_stepup(lis_values, alpha: float) -> DecisionResult:
    """Running-mean step-up rule on posterior null probabilities.

    Rejects the k smallest values, k the largest index whose ascending
    running mean is at most alpha; equal values are taken in position order.
    """
    _check_alpha(alpha)
    vals = np.asarray(lis_values, dtype=np.float64)
    if vals.ndim != 1 or vals.size == 0:
        raise ValueError("lis_values must be a non-empty 1-D array")
    if (vals < 0).any() or (vals > 1).any():
        raise ValueError("LIS values must lie in [0, 1]")
    order = np.argsort(vals, kind="stable")
    sorted_vals = vals[order]
    running_mean = np.cumsum(sorted_vals) / np.arange(1, vals.size + 1)
    k = _stepup_count(running_mean, np.full(vals.size, alpha))
    rejected = np.zeros(vals.size, dtype=bool)
    rejected[order[:k]] = True
    threshold = float(sorted_vals[k - 1]) if k else float("nan")
    return DecisionResult(rejected=rejected, k=k, threshold=threshold)


def plis(group_lis_lists: Sequence, alpha: float) -> DecisionResult:
    """Pooled rule: one global step-up over the LIS values of all groups."""
    groups = [np.asarray(g, dtype=np.float64) for g in group_lis_lists]
    if not groups:
        raise ValueError("need at least one group")
    pooled = np.concatenate(groups)
    res = lis_stepup(pooled, alpha)
    res.group_sizes = tuple(g.size for g in groups)
    return res


def slis(group_lis_lists: Sequence, alpha: float) -> DecisionResult:
    """Separate rule: per-group step-up at the same level, results combined.

    The combined threshold is per-group, so the global field is NaN.
    """
    groups = [np.asarray(g, dtype=np.float64) for g in group_lis_lists]
    if not groups:
        raise ValueError("need at least one group")
    parts = [lis_stepup(g, alpha) for g in groups]
    rejected = np.concatenate([p.rejected for p in parts])
    threshold = parts[0].threshold if len(parts) == 1 else float("nan")
    return DecisionResult(
        rejected=rejected,
        k=int(sum(p.k for p in parts)),
        threshold=threshold,
        group_sizes=tuple(g.size for g in groups),
    )


def bh(p_values, alpha: float) -> DecisionResult:
    """Benjamini-Hochberg step-up on p-values."""
    _check_alpha(alpha)
    p = np.asarray(p_values, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("p_values must be a non-empty 1-D array")
    if (p < 0).any() or (p > 1).any():
        raise ValueError("p-values must lie in [0, 1]")
    order = np.argsort(p, kind="stable")
    sorted_p = p[order]
    thresholds = alpha * np.arange(1, p.size + 1) / p.size
    k = _stepup_count(sorted_p, thresholds)
    rejected = np.zeros(p.size, dtype=bool)
    rejected[order[:k]] = True
    threshold = float(sorted_p[k - 1]) if k else float("nan")
    return DecisionResult(rejected=rejected, k=k, threshold=threshold)


def local_fdr(
    stat_field, null_prop: float, mixture: emission.MixtureParams, alpha: float
) -> tuple:
    """Independence-model local false discovery rates plus their step-up decision.

    lfdr_s = pi0 f0(x_s) / (pi0 f0(x_s) + (1 - pi0) f(x_s)) for given null
    proportion pi0 and nonnull mixture f; the decision applies the same
    running-mean step-up rule used for LIS values. Returns (lfdr, decision).
    """
    if not 0.0 <= null_prop <= 1.0:
        raise ValueError(f"null_prop must be in [0, 1], got {null_prop}")
    x = np.asarray(stat_field, dtype=np.float64)
    with np.errstate(divide="ignore"):
        log_null = np.log(null_prop) + emission.null_logpdf(x)
        log_alt = np.log1p(-null_prop) + emission.nonnull_logpdf(mixture, x)
    lfdr = np.exp(log_null - np.logaddexp(log_null, log_alt))
    return lfdr, lis_stepup(lfdr, alpha)


@dataclass
class Metrics:
    """Single-replicate error tallies against a known truth field."""

    fdp: float
    fnp: float
    tp: int
    k: int
    n: int


def metrics(decision, truth_field) -> Metrics:
    """False discovery/nondiscovery proportions and true-positive count.

    Zero-rejection and all-rejection edge cases use max(denominator, 1).
    ``decision`` may be a DecisionResult or a boolean rejection array.
    """
    rejected = decision.rejected if isinstance(decision, DecisionResult) else np.asarray(decision)
    rejected = rejected.astype(bool)
    truth = np.asarray(truth_field).astype(bool)
    if rejected.shape != truth.shape:
        raise ValueError(f"shape mismatch: decision {rejected.shape}, truth {truth.shape}")
    n = truth.size
    k = int(rejected.sum())
    tp = int((rejected & truth).sum())
    missed = int((~rejected & truth).sum())
    return Metrics(
        fdp=(k - tp) / max(k, 1),
        fnp=missed / max(n - k, 1),
        tp=tp,
        k=k,
        n=n,
    )


def aggregate(per_replicate: Sequence[Metrics]) -> dict:
    """Replication averages (FDR-hat, FNR-hat, ATP) with MC standard errors."""
    if not per_replicate:
        raise ValueError("no replicate metrics to aggregate")
    arr = np.array([[m.fdp, m.fnp, m.tp] for m in per_replicate], dtype=np.float64)
    means = arr.mean(axis=0)
    if arr.shape[0] > 1:
        ses = arr.std(axis=0, ddof=1) / np.sqrt(arr.shape[0])
    else:
        ses = np.full(3, np.nan)
    return {
        "fdr": (float(means[0]), float(ses[0])),
        "fnr": (float(means[1]), float(ses[1])),
        "atp": (float(means[2]), float(ses[2])),
        "n_used": int(arr.shape[0]),
    }
