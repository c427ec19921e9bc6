"""Observation model: standard-normal null, normal-mixture nonnull.

Also provides the ingestion transforms (Welch two-sample t statistic and the
t-to-z quantile transform) that turn subject-level data into the z-scale
statistics the lattice model consumes.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp, ndtr, ndtri, stdtr

_LOG_2PI = np.log(2.0 * np.pi)
_TAIL_EPS = 1e-15  # CDF clamp before the normal quantile


@dataclass(frozen=True)
class MixtureParams:
    """Nonnull normal mixture: weights, means, variances (one entry per component)."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        m = np.atleast_1d(np.asarray(self.means, dtype=np.float64))
        v = np.atleast_1d(np.asarray(self.variances, dtype=np.float64))
        if not (w.shape == m.shape == v.shape) or w.ndim != 1 or w.size < 1:
            raise ValueError("weights, means and variances must be equal-length 1-D")
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must be non-negative and sum to 1, got {w}")
        if not np.isfinite(m).all() or not np.isfinite(v).all() or (v <= 0).any():
            raise ValueError("means must be finite and variances positive")
        for name, val in (("weights", w), ("means", m), ("variances", v)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)

    @property
    def n_components(self) -> int:
        return self.weights.size


def null_logpdf(x) -> np.ndarray:
    """Log density of N(0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    return -0.5 * (x * x + _LOG_2PI)


def null_density(x) -> np.ndarray:
    """Density of the theoretical null N(0, 1)."""
    return np.exp(null_logpdf(x))


def component_logpdfs(mixture: MixtureParams, x) -> np.ndarray:
    """log(p_l) + log N(x; mu_l, var_l), shape (..., L); -inf for zero weights."""
    x = np.asarray(x, dtype=np.float64)[..., np.newaxis]
    var = mixture.variances
    logpdf = -0.5 * ((x - mixture.means) ** 2 / var + np.log(var) + _LOG_2PI)
    with np.errstate(divide="ignore"):
        return logpdf + np.log(mixture.weights)


def nonnull_logpdf(mixture: MixtureParams, x) -> np.ndarray:
    """Log of the mixture density sum_l p_l N(x; mu_l, var_l)."""
    return logsumexp(component_logpdfs(mixture, x), axis=-1)


def nonnull_density(mixture: MixtureParams, x) -> np.ndarray:
    return np.exp(nonnull_logpdf(mixture, x))


def responsibilities(mixture: MixtureParams, gamma1, x) -> np.ndarray:
    """Per-voxel component masses w_s(l), shape (N, L).

    w_s(l) splits the posterior signal probability gamma1 of voxel s across
    mixture components in proportion to p_l f_l(x_s); each row sums to
    gamma1[s]. Computed in log space so vanishing densities never divide by
    zero.
    """
    gamma1 = np.asarray(gamma1, dtype=np.float64)
    if (gamma1 < 0).any() or (gamma1 > 1).any():
        raise ValueError("gamma1 values must lie in [0, 1]")
    log_terms = component_logpdfs(mixture, x)
    shift = log_terms.max(axis=-1, keepdims=True)
    expd = np.exp(log_terms - shift)
    frac = expd / expd.sum(axis=-1, keepdims=True)
    return gamma1[..., np.newaxis] * frac


class GroupSummary(NamedTuple):
    """Per-group summary statistics: subject count, mean, sample variance."""

    n: int
    mean: float
    var: float


def welch_t(a: GroupSummary, b: GroupSummary) -> tuple:
    """Welch two-sample t statistic and Satterthwaite degrees of freedom."""
    a, b = GroupSummary(*a), GroupSummary(*b)
    for g in (a, b):
        if g.n < 2:
            raise ValueError(f"each group needs at least 2 subjects, got {g.n}")
        if not np.isfinite(g.mean) or not np.isfinite(g.var) or g.var < 0:
            raise ValueError(f"invalid group summary {g}")
    ra, rb = a.var / a.n, b.var / b.n
    if ra + rb == 0.0:
        raise ValueError("zero variance in both groups, t statistic undefined")
    t = (a.mean - b.mean) / np.sqrt(ra + rb)
    df = (ra + rb) ** 2 / (ra**2 / (a.n - 1) + rb**2 / (b.n - 1))
    return float(t), float(df)


def t_to_z(t, df):
    """Map t statistics to z scale through the central t CDF.

    z = Phi^-1(G0(t)); the CDF is clamped to [1e-15, 1 - 1e-15] before the
    quantile, so |z| saturates near 7.94 for extreme inputs. Computed from
    the matching tail to avoid cancellation, which keeps the map odd in t.
    """
    t = np.asarray(t, dtype=np.float64)
    df = np.asarray(df, dtype=np.float64)
    if not np.isfinite(t).all():
        raise ValueError("t statistics must be finite")
    if (df <= 0).any():
        raise ValueError("degrees of freedom must be positive")
    upper = np.clip(stdtr(df, -np.abs(t)), _TAIL_EPS, None)
    mag = -ndtri(upper)
    z = np.where(t >= 0, mag, -mag)
    return z if z.ndim else float(z)


def two_sided_p_from_z(z) -> np.ndarray:
    """Two-sided p-values 2(1 - Phi(|z|)), computed from the normal tail."""
    z = np.asarray(z, dtype=np.float64)
    return np.minimum(2.0 * ndtr(-np.abs(z)), 1.0)
