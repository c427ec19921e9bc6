"""Two-parameter Ising model on a masked lattice.

Provides the exact single-site conditionals, systematic-scan Gibbs samplers
for the prior field and for the data-conditioned field (coupling beta with a
per-site external field), Monte Carlo estimates of the score and observed
information of the pairwise/site sufficient statistics, and an
exhaustive-enumeration oracle for lattices small enough to list every
configuration.

The samplers draw one uniform per site per sweep, transform the block to
logits with numpy, and hand the kernels nothing but adds, multiplies and
compares; see ``_kernels_py`` for why this makes the compiled and fallback
backends bit-identical.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from . import emission
from ._backend import get_backend
from .lattice import Lattice3D, as_stat_field
from .seeding import rng_from_key

_ENUM_MAX_SITES = 20


@dataclass(frozen=True)
class IsingParams:
    """Pairwise coupling beta and external field h (both dimensionless)."""

    beta: float
    h: float

    def __post_init__(self):
        if not (np.isfinite(self.beta) and np.isfinite(self.h)):
            raise ValueError(f"parameters must be finite, got beta={self.beta}, h={self.h}")

    def as_vector(self) -> np.ndarray:
        return np.array([self.beta, self.h], dtype=np.float64)


@dataclass(frozen=True)
class GibbsConfig:
    """Chain settings: retained sweeps, burn-in sweeps, seed, scan order.

    One iteration is one full sweep over all sites; one sample is retained
    per post-burn-in sweep. ``checkerboard`` alternates the two parity
    classes (exact on this bipartite lattice and vectorizable), ``raster``
    scans sites in index order.
    """

    n_samples: int
    burn_in: int = 0
    seed: int = 0
    sweep_order: str = "checkerboard"

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.burn_in < 0:
            raise ValueError(f"burn_in must be >= 0, got {self.burn_in}")
        if self.sweep_order not in ("raster", "checkerboard"):
            raise ValueError(f"unknown sweep_order {self.sweep_order!r}")


@dataclass
class ChainResult:
    """Summaries of one Gibbs chain.

    h_stats holds (pair_sum, site_sum) per retained sweep; site_mean is the
    per-site occupancy frequency over retained sweeps; samples are the raw
    retained fields when requested.
    """

    h_stats: np.ndarray
    site_mean: np.ndarray
    samples: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.h_stats.shape[0]

    def h_mean(self) -> np.ndarray:
        return self.h_stats.mean(axis=0)

    def h_cov(self) -> np.ndarray:
        """Sample covariance (divisor n-1) of the sufficient statistics."""
        if self.n < 2:
            raise ValueError("covariance needs at least 2 retained samples")
        cov = np.cov(self.h_stats.astype(np.float64).T, ddof=1)
        return (cov + cov.T) / 2.0

    def log_mean_exp_neg_energy(self, phi: IsingParams) -> float:
        """log (1/n) sum_i exp(-phi . H_i), stabilized by max shift."""
        v = -(phi.beta * self.h_stats[:, 0] + phi.h * self.h_stats[:, 1])
        return float(logsumexp(v) - np.log(self.n))


def conditional_prob(params: IsingParams, neighbor_sum: int) -> float:
    """P(theta_s = 1 | neighbors) = logistic(beta * neighbor_sum + h)."""
    t = params.beta * neighbor_sum + params.h
    if t >= 0:
        return 1.0 / (1.0 + np.exp(-t))
    e = np.exp(t)
    return float(e / (1.0 + e))


def _logit(u: np.ndarray) -> np.ndarray:
    # u in [0, 1); u == 0 maps to -inf, which always accepts state 1,
    # matching u < p for any p > 0
    with np.errstate(divide="ignore"):
        return np.log(u) - np.log1p(-u)


def run_chain(
    lattice: Lattice3D,
    beta: float,
    site_field: np.ndarray,
    config: GibbsConfig,
    collect_samples: bool = False,
    rng: Optional[np.random.Generator] = None,
    backend=None,
) -> ChainResult:
    """Run one systematic-scan Gibbs chain from the all-zero state.

    ``site_field`` is the per-site external field; the prior chain uses a
    constant field h. The chain consumes exactly N uniforms per sweep in
    site order regardless of scan order, so a fixed seed fixes the chain.
    """
    kern = get_backend() if backend is None else backend
    n_sites = lattice.n
    hs = np.ascontiguousarray(site_field, dtype=np.float64)
    if hs.shape != (n_sites,):
        raise ValueError(f"site field has shape {hs.shape}, expected ({n_sites},)")
    if not np.isfinite(hs).all():
        raise ValueError("site field values must be finite")
    if rng is None:
        rng = rng_from_key(config.seed)

    vext = np.zeros(n_sites + 1, dtype=np.uint8)
    nbr = np.ascontiguousarray(lattice.nbr, dtype=np.int32)
    checker = config.sweep_order == "checkerboard"
    color0 = lattice.color_sites(0)
    color1 = lattice.color_sites(1)

    # uniforms are drawn in blocks of sweeps; consumption order (site-major
    # within sweep) is unchanged, only the numpy call overhead is amortized
    block = 64

    def eta_blocks(total):
        done = 0
        while done < total:
            b = min(block, total - done)
            yield _logit(rng.random((b, n_sites)))
            done += b

    def run_sweeps(n_sweeps, on_sample=None):
        for etas in eta_blocks(n_sweeps):
            for eta in etas:
                if checker:
                    kern.sweep_color(vext, nbr, beta, hs, eta, color0)
                    kern.sweep_color(vext, nbr, beta, hs, eta, color1)
                else:
                    kern.sweep_raster(vext, nbr, beta, hs, eta)
                if on_sample is not None:
                    on_sample()

    run_sweeps(config.burn_in)

    h_stats = np.empty((config.n_samples, 2), dtype=np.int64)
    site_hits = np.zeros(n_sites, dtype=np.int64)
    samples = np.empty((config.n_samples, n_sites), dtype=np.uint8) if collect_samples else None
    values = vext[:n_sites]
    cursor = iter(range(config.n_samples))

    def record():
        i = next(cursor)
        pair2, site = kern.field_stats(vext, nbr)
        h_stats[i, 0] = pair2 // 2
        h_stats[i, 1] = site
        np.add(site_hits, values, out=site_hits)
        if collect_samples:
            samples[i] = values

    run_sweeps(config.n_samples, on_sample=record)

    return ChainResult(
        h_stats=h_stats,
        site_mean=site_hits / config.n_samples,
        samples=samples,
    )


def gibbs_sample_prior(lattice: Lattice3D, params: IsingParams, config: GibbsConfig) -> np.ndarray:
    """Retained prior-field samples, shape (n_samples, N), dtype uint8."""
    hs = np.full(lattice.n, params.h, dtype=np.float64)
    return run_chain(lattice, params.beta, hs, config, collect_samples=True).samples


def gibbs_sample_posterior(
    lattice: Lattice3D, params: IsingParams, site_field: np.ndarray, config: GibbsConfig
) -> np.ndarray:
    """Samples from the field with coupling params.beta and per-site field.

    ``site_field`` supersedes params.h (a constant field equal to h recovers
    the prior sampler exactly).
    """
    return run_chain(lattice, params.beta, site_field, config, collect_samples=True).samples


def posterior_site_field(
    params: IsingParams, mixture: emission.MixtureParams, stat_field: np.ndarray
) -> np.ndarray:
    """Per-site external field of the data-conditioned Ising distribution.

    h_s = h + log f(x_s) - log f0(x_s) with f the nonnull mixture and f0 the
    standard-normal null: conditioning on the observations tilts each site by
    its log likelihood ratio.
    """
    x = np.asarray(stat_field, dtype=np.float64)
    return params.h + emission.nonnull_logpdf(mixture, x) - emission.null_logpdf(x)


def h_of_samples(lattice: Lattice3D, samples: np.ndarray) -> np.ndarray:
    """(pair_sum, site_sum) for each row of a (n, N) sample array."""
    samples = np.asarray(samples)
    if samples.ndim != 2 or samples.shape[1] != lattice.n:
        raise ValueError(f"samples must have shape (n, {lattice.n})")
    out = np.empty((samples.shape[0], 2), dtype=np.int64)
    nbr = lattice.nbr
    for i, row in enumerate(samples.astype(np.int64)):
        vext = np.append(row, 0)
        out[i, 0] = int((row * vext[nbr].sum(axis=1)).sum()) // 2
        out[i, 1] = int(row.sum())
    return out


def mc_score_information(
    prior_samples: np.ndarray, posterior_samples: np.ndarray, lattice: Lattice3D
) -> tuple:
    """Monte Carlo score U and information I of the pairwise model.

    U is the posterior-minus-prior mean of the sufficient statistics,
    I the sample covariance (divisor n-1) of the prior-sample statistics.
    """
    h_prior = h_of_samples(lattice, prior_samples)
    h_post = h_of_samples(lattice, posterior_samples)
    if h_prior.shape[0] < 2:
        raise ValueError("information estimate needs at least 2 prior samples")
    u = h_post.mean(axis=0) - h_prior.mean(axis=0)
    cov = np.cov(h_prior.astype(np.float64).T, ddof=1)
    return u, (cov + cov.T) / 2.0


@dataclass
class ExactDistribution:
    """Exhaustively enumerated field distribution on a tiny lattice.

    Configuration i assigns site s the state (i >> s) & 1. ``site_sums`` and
    ``pair_sums`` are the sufficient statistics of every configuration;
    ``log_z`` is the exact log normalizing constant.
    """

    probs: np.ndarray
    log_z: float
    e_h: np.ndarray
    var_h: np.ndarray
    marginals: np.ndarray
    pair_sums: np.ndarray
    site_sums: np.ndarray

    def config_states(self, i: int) -> np.ndarray:
        n = self.marginals.size
        return ((i >> np.arange(n)) & 1).astype(np.uint8)

    def config_index(self, states) -> int:
        states = np.asarray(states).astype(np.int64)
        return int((states << np.arange(states.size)).sum())


def enumerate_exact(
    lattice: Lattice3D, params: IsingParams, site_field: Optional[np.ndarray] = None
) -> ExactDistribution:
    """Exact distribution over all 2^N configurations (N <= 20).

    With ``site_field`` given, enumerates the data-conditioned field
    (coupling beta, per-site external field); otherwise the prior field.
    """
    n = lattice.n
    if n > _ENUM_MAX_SITES:
        raise ValueError(f"enumeration supports at most {_ENUM_MAX_SITES} sites, lattice has {n}")
    hs = np.full(n, params.h) if site_field is None else as_stat_field(lattice, site_field)

    bits = ((np.arange(2**n, dtype=np.int64)[:, None] >> np.arange(n)) & 1).astype(np.uint8)
    edges = np.array(
        [(s, t) for s in range(n) for t in lattice.neighbors(s) if s < t], dtype=np.int64
    ).reshape(-1, 2)
    if edges.size:
        pair_sums = (bits[:, edges[:, 0]] & bits[:, edges[:, 1]]).sum(axis=1, dtype=np.int64)
    else:
        pair_sums = np.zeros(2**n, dtype=np.int64)
    site_sums = bits.sum(axis=1, dtype=np.int64)

    score = params.beta * pair_sums + bits @ hs
    log_z = float(logsumexp(score))
    probs = np.exp(score - log_z)

    h_mat = np.stack([pair_sums, site_sums], axis=1).astype(np.float64)
    e_h = probs @ h_mat
    second = (h_mat * probs[:, None]).T @ h_mat
    var_h = second - np.outer(e_h, e_h)
    return ExactDistribution(
        probs=probs,
        log_z=log_z,
        e_h=e_h,
        var_h=(var_h + var_h.T) / 2.0,
        marginals=probs @ bits,
        pair_sums=pair_sums,
        site_sums=site_sums,
    )


def batch_means_se(values: np.ndarray, n_batches: int = 50) -> tuple:
    """Mean and batch-means standard error for autocorrelated chain output.

    Splits the sequence into ``n_batches`` contiguous batches and uses the
    spread of batch means; valid when batches are long compared to the
    autocorrelation time.
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    if n < 2 * n_batches:
        raise ValueError(f"need at least {2 * n_batches} values, got {n}")
    usable = (n // n_batches) * n_batches
    batches = values[:usable].reshape(n_batches, -1, *values.shape[1:])
    bm = batches.mean(axis=1)
    se = bm.std(axis=0, ddof=1) / np.sqrt(n_batches)
    return values.mean(axis=0), se
