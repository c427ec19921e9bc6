"""Generalized EM estimation of the lattice model parameters.

One outer iteration alternates a Monte Carlo E-step (posterior Gibbs chain
giving per-site signal probabilities and the posterior mean of the pairwise
sufficient statistics), a closed-form mixture M-step (plain for a single
nonnull component, inverse-gamma penalized for two or more), and a Newton
step with Armijo backtracking for the coupling/field pair. The run stops when
the relative parameter change stays below eps2 for three consecutive
iterations whose accepted backtrack depth is zero, or at max_iters.

An exact engine replaces every chain estimate with exhaustive enumeration on
lattices small enough to list all configurations; it exists to make the
ascent property of the algorithm directly checkable.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import emission, seeding
from .emission import MixtureParams
from .ising import (
    ChainResult,
    GibbsConfig,
    IsingParams,
    enumerate_exact,
    posterior_site_field,
    run_chain,
)
from .lattice import Lattice3D, as_stat_field


class EstimationError(RuntimeError):
    """Raised when parameter estimation cannot continue."""


@dataclass(frozen=True)
class ModelParams:
    """Full parameter set: Ising pair (beta, h) plus the nonnull mixture."""

    ising: IsingParams
    mixture: MixtureParams

    def to_vector(self) -> np.ndarray:
        """Stopping-rule coordinates: beta, h, p_1..p_{L-1}, means, variances."""
        m = self.mixture
        return np.concatenate(
            [
                [self.ising.beta, self.ising.h],
                m.weights[:-1],
                m.means,
                m.variances,
            ]
        )


@dataclass(frozen=True)
class GemConfig:
    """Estimation settings; defaults follow the simulation configuration."""

    init: ModelParams
    gibbs: GibbsConfig
    eps1: float = 1e-3
    eps2: float = 1e-3
    eps3: float = 1e-4
    armijo_alpha: float = 1e-4
    penalty_a: float = 1.0
    penalty_b: float = 2.0
    max_iters: int = 1000
    max_backtracks: int = 60
    final_sample_factor: int = 2
    engine: str = "mc"

    def __post_init__(self):
        if not (0 < self.eps3 < self.eps2):
            raise ValueError(f"need 0 < eps3 < eps2, got {self.eps3}, {self.eps2}")
        if self.eps1 <= 0 or self.armijo_alpha <= 0:
            raise ValueError("eps1 and armijo_alpha must be positive")
        if self.penalty_a <= 0 or self.penalty_b <= 1:
            raise ValueError("penalty requires a > 0 and b > 1")
        if self.max_iters < 0 or self.max_backtracks < 1 or self.final_sample_factor < 1:
            raise ValueError("invalid iteration limits")
        if self.engine not in ("mc", "exact"):
            raise ValueError(f"unknown engine {self.engine!r}")

    @property
    def n_components(self) -> int:
        return self.init.mixture.n_components


@dataclass
class PosteriorSummary:
    """Per-voxel posterior quantities at one parameter value.

    gamma1[s] = P(signal at s | data); w[s, l] splits gamma1[s] over mixture
    components; lis[s] = P(no signal at s | data) = 1 - gamma1[s].
    """

    gamma1: np.ndarray
    w: np.ndarray

    @property
    def gamma0(self) -> np.ndarray:
        return 1.0 - self.gamma1

    @property
    def lis(self) -> np.ndarray:
        return 1.0 - self.gamma1


@dataclass
class IterationRecord:
    phi: np.ndarray
    backtrack_depth: int
    q2_diff: float
    stop_ratio: float
    small_step: bool = False
    exhausted: bool = False


@dataclass
class GemTrace:
    records: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    pseudo_loglik: float = math.nan


@dataclass
class GemResult:
    params: ModelParams
    summary: PosteriorSummary
    trace: GemTrace


# ---------------------------------------------------------------------------
# inference engines
# ---------------------------------------------------------------------------


class McEngine:
    """Gibbs-chain estimates; one chain per (iteration, purpose) sub-stream."""

    def __init__(self, lattice: Lattice3D, x: np.ndarray, gibbs: GibbsConfig, final_factor=1):
        self.lattice = lattice
        self.x = x
        self.gibbs = gibbs
        self.final_factor = final_factor

    def _chain(self, beta, hs, purpose, *key, factor=1) -> ChainResult:
        cfg = GibbsConfig(
            n_samples=self.gibbs.n_samples * factor,
            burn_in=self.gibbs.burn_in,
            seed=self.gibbs.seed,
            sweep_order=self.gibbs.sweep_order,
        )
        rng = seeding.rng_from_key(self.gibbs.seed, purpose, *key)
        return run_chain(self.lattice, beta, hs, cfg, rng=rng)

    def posterior(self, params: ModelParams, iteration: int):
        """Returns (gamma1, posterior mean of the sufficient statistics)."""
        hs = posterior_site_field(params.ising, params.mixture, self.x)
        chain = self._chain(params.ising.beta, hs, seeding.POSTERIOR_CHAIN, iteration)
        return chain.site_mean, chain.h_mean()

    def final_posterior(self, params: ModelParams, iteration: int):
        """Fresh, longer chain for the post-convergence summary."""
        hs = posterior_site_field(params.ising, params.mixture, self.x)
        chain = self._chain(
            params.ising.beta, hs, seeding.FINAL_CHAIN, iteration, factor=self.final_factor
        )
        return chain.site_mean, chain.h_mean()

    def prior(self, phi: IsingParams, iteration: int, candidate: int):
        """Prior chain at phi; candidate 0 is the current iterate."""
        hs = np.full(self.lattice.n, phi.h, dtype=np.float64)
        return self._chain(phi.beta, hs, seeding.PRIOR_CHAIN, iteration, candidate)

    @staticmethod
    def prior_moments(stats: ChainResult):
        return stats.h_mean(), stats.h_cov()

    @staticmethod
    def q2_diff(phi_new, stats_new, phi_old, stats_old, post_h_mean) -> float:
        """Two-term chain estimate of Q2(phi_new) - Q2(phi_old)."""
        delta = phi_new.as_vector() - phi_old.as_vector()
        return float(
            delta @ post_h_mean
            + stats_new.log_mean_exp_neg_energy(phi_new)
            - stats_old.log_mean_exp_neg_energy(phi_old)
        )


class ExactEngine:
    """Enumeration-backed engine for lattices with at most 20 sites."""

    def __init__(self, lattice: Lattice3D, x: np.ndarray, gibbs: GibbsConfig = None):
        self.lattice = lattice
        self.x = x

    def posterior(self, params: ModelParams, iteration: int, final: bool = False):
        hs = posterior_site_field(params.ising, params.mixture, self.x)
        dist = enumerate_exact(self.lattice, params.ising, hs)
        return dist.marginals, dist.e_h

    def final_posterior(self, params: ModelParams, iteration: int):
        return self.posterior(params, iteration)

    def prior(self, phi: IsingParams, iteration: int, candidate: int):
        return enumerate_exact(self.lattice, phi)

    @staticmethod
    def prior_moments(dist):
        return dist.e_h, dist.var_h

    @staticmethod
    def q2_diff(phi_new, dist_new, phi_old, dist_old, post_h_mean) -> float:
        delta = phi_new.as_vector() - phi_old.as_vector()
        return float(delta @ post_h_mean - (dist_new.log_z - dist_old.log_z))


def _make_engine(lattice, x, config: GemConfig):
    if config.engine == "exact":
        return ExactEngine(lattice, x)
    return McEngine(lattice, x, config.gibbs, final_factor=config.final_sample_factor)


# ---------------------------------------------------------------------------
# E-step and M-steps
# ---------------------------------------------------------------------------


def estep_marginals(
    lattice: Lattice3D,
    params: ModelParams,
    stat_field: np.ndarray,
    gibbs_config: GibbsConfig,
    rng: Optional[np.random.Generator] = None,
    collect_samples: bool = False,
):
    """Posterior Gibbs E-step at ``params``.

    Returns the PosteriorSummary (signal probabilities, responsibilities,
    LIS values) and the underlying ChainResult.
    """
    x = as_stat_field(lattice, stat_field)
    hs = posterior_site_field(params.ising, params.mixture, x)
    chain = run_chain(
        lattice, params.ising.beta, hs, gibbs_config, collect_samples=collect_samples, rng=rng
    )
    gamma1 = chain.site_mean
    w = emission.responsibilities(params.mixture, gamma1, x)
    return PosteriorSummary(gamma1=gamma1, w=w), chain


def mstep_mixture(
    summary: PosteriorSummary,
    stat_field: np.ndarray,
    config: GemConfig,
    current: MixtureParams,
) -> MixtureParams:
    """Closed-form mixture update from posterior responsibilities.

    Weights and means follow the Lagrange solution; variances use the plain
    weighted update for one component and the inverse-gamma penalized update
    (2a + weighted SSE) / (2b + weight mass) for two or more, which bounds
    them away from zero. Components with no posterior mass keep their
    current mean and take the penalty-floor variance.
    """
    x = np.asarray(stat_field, dtype=np.float64)
    gamma_total = float(summary.gamma1.sum())
    if gamma_total <= 0.0:
        raise EstimationError("no posterior signal mass; mixture update undefined")
    w = summary.w
    mass = w.sum(axis=0)
    weights = mass / gamma_total
    weights = weights / weights.sum()

    penalized = config.n_components >= 2
    means = np.array(current.means, dtype=np.float64)
    variances = np.empty_like(means)
    for l in range(mass.size):
        if mass[l] > 1e-12:
            means[l] = float(w[:, l] @ x) / mass[l]
            sse = float(w[:, l] @ (x - means[l]) ** 2)
        else:
            sse = 0.0  # dead component: mean frozen, variance at penalty floor
        if penalized:
            variances[l] = (2.0 * config.penalty_a + sse) / (2.0 * config.penalty_b + mass[l])
        else:
            if mass[l] <= 1e-12:
                variances[l] = current.variances[l]
            else:
                variances[l] = sse / mass[l]
    if (variances <= 0).any() or not np.isfinite(variances).all():
        raise EstimationError(f"degenerate variance update: {variances}")
    return MixtureParams(weights=weights, means=means, variances=variances)


def mstep_ising(
    engine,
    phi: IsingParams,
    post_h_mean: np.ndarray,
    iteration: int,
    config: GemConfig,
) -> tuple:
    """Newton direction with Armijo backtracking on the pairwise parameters.

    The step is phi + 2^-m * I^-1 U for the first depth m whose estimated
    Q2 increase meets the Armijo bound armijo_alpha * 2^-m * U'I^-1 U. If the
    proposed step falls below the eps3 relative-change criterion first, the
    current phi is kept (small_step flag); if every depth up to the cap
    fails, phi is kept with the exhausted flag.

    Returns (phi_next, depth, info) where info carries q2_diff and flags.
    """
    base = engine.prior(phi, iteration, 0)
    h_mean, h_cov = engine.prior_moments(base)
    u = post_h_mean - h_mean
    if not np.isfinite(u).all() or not np.isfinite(h_cov).all():
        raise EstimationError(f"non-finite score or information: U={u}, I={h_cov}")

    info = {"u": u, "q2_diff": 0.0, "small_step": False, "exhausted": False,
            "gradient_fallback": False}
    reg = h_cov + 1e-8 * np.eye(2)
    try:
        direction = np.linalg.solve(reg, u)
        if not np.isfinite(direction).all():
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        # ascend along the score, scaled by the average curvature
        direction = u / max(float(np.trace(h_cov)) / 2.0, 1e-8)
        info["gradient_fallback"] = True

    predicted = float(u @ direction)
    phi_vec = phi.as_vector()
    for m in range(config.max_backtracks):
        lam = 2.0**-m
        cand_vec = phi_vec + lam * direction
        step_ratio = float(np.max(np.abs(cand_vec - phi_vec) / (np.abs(phi_vec) + config.eps1)))
        if step_ratio < config.eps3:
            info["small_step"] = True
            return phi, m, info
        if not np.isfinite(cand_vec).all():
            continue
        cand = IsingParams(beta=float(cand_vec[0]), h=float(cand_vec[1]))
        cand_stats = engine.prior(cand, iteration, m + 1)
        q2_diff = engine.q2_diff(cand, cand_stats, phi, base, post_h_mean)
        if q2_diff >= config.armijo_alpha * lam * predicted:
            info["q2_diff"] = q2_diff
            return cand, m, info
    info["exhausted"] = True
    return phi, config.max_backtracks, info


def run_gem(lattice: Lattice3D, stat_field: np.ndarray, config: GemConfig) -> GemResult:
    """Fit the full parameter set to one observed statistic field.

    Alternates the E-step and the two M-steps until the relative-change rule
    holds on three consecutive depth-0 iterations, then recomputes the
    posterior summary at the estimate with a fresh, longer chain. A run that
    exhausts max_iters returns converged=False but still reports the final
    iterate.
    """
    x = as_stat_field(lattice, stat_field)
    engine = _make_engine(lattice, x, config)
    params = config.init
    trace = GemTrace()
    consecutive = 0

    for t in range(config.max_iters):
        gamma1, post_h_mean = engine.posterior(params, t)
        summary = PosteriorSummary(
            gamma1=gamma1, w=emission.responsibilities(params.mixture, gamma1, x)
        )
        mixture = mstep_mixture(summary, x, config, params.mixture)
        phi, depth, info = mstep_ising(
            engine, params.ising, post_h_mean, t, config
        )
        new_params = ModelParams(ising=phi, mixture=mixture)

        old_vec, new_vec = params.to_vector(), new_params.to_vector()
        stop_ratio = float(np.max(np.abs(new_vec - old_vec) / (np.abs(old_vec) + config.eps1)))
        trace.records.append(
            IterationRecord(
                phi=new_vec,
                backtrack_depth=depth,
                q2_diff=info["q2_diff"],
                stop_ratio=stop_ratio,
                small_step=info["small_step"],
                exhausted=info["exhausted"],
            )
        )
        params = new_params
        trace.iterations = t + 1

        if stop_ratio < config.eps2 and depth == 0:
            consecutive += 1
            if consecutive >= 3:
                trace.converged = True
                break
        else:
            consecutive = 0

    gamma1, _ = engine.final_posterior(params, trace.iterations)
    summary = PosteriorSummary(
        gamma1=gamma1, w=emission.responsibilities(params.mixture, gamma1, x)
    )
    trace.pseudo_loglik = _pseudo_loglik(params.mixture, gamma1, x)
    return GemResult(params=params, summary=summary, trace=trace)


def _pseudo_loglik(mixture: MixtureParams, gamma1: np.ndarray, x: np.ndarray) -> float:
    """Independence-style marginal log likelihood at the mean signal rate.

    Diagnostic for comparing runs (e.g. different component counts); not the
    model objective.
    """
    pi1 = float(np.clip(gamma1.mean(), 1e-12, 1 - 1e-12))
    a = np.log1p(-pi1) + emission.null_logpdf(x)
    b = np.log(pi1) + emission.nonnull_logpdf(mixture, x)
    return float(np.logaddexp(a, b).sum())


# ---------------------------------------------------------------------------
# exact Q evaluation (enumeration-scale diagnostics)
# ---------------------------------------------------------------------------


def exact_q(
    lattice: Lattice3D,
    stat_field: np.ndarray,
    candidate: ModelParams,
    reference: ModelParams,
    penalty_a: Optional[float] = None,
    penalty_b: Optional[float] = None,
) -> float:
    """Exact EM auxiliary value Q(candidate | reference) on a tiny lattice.

    Adds the log inverse-gamma variance penalty when penalty_a/penalty_b are
    given (the objective the penalized updates ascend).
    """
    x = as_stat_field(lattice, stat_field)
    hs = posterior_site_field(reference.ising, reference.mixture, x)
    post = enumerate_exact(lattice, reference.ising, hs)
    gamma1 = post.marginals
    w = emission.responsibilities(reference.mixture, gamma1, x)

    q1 = float((1.0 - gamma1) @ emission.null_logpdf(x))
    log_terms = emission.component_logpdfs(candidate.mixture, x)
    contrib = np.where(w > 0, w * log_terms, 0.0)
    if np.isneginf(log_terms[w > 0]).any():
        return -math.inf
    q1 += float(contrib.sum())

    if penalty_a is not None:
        a, b = float(penalty_a), float(penalty_b)
        v = candidate.mixture.variances
        q1 += float(
            np.sum((b - 1) * np.log(a) - math.lgamma(b - 1) - b * np.log(v) - a / v)
        )

    prior = enumerate_exact(lattice, candidate.ising)
    q2 = float(candidate.ising.as_vector() @ post.e_h) - prior.log_z
    return q1 + q2
