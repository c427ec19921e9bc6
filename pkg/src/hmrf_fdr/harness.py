"""Replicated simulation studies with figure-ready aggregation.

Three study designs: a single group with one nonnull component, a single
group with a two-component nonnull mixture, and a two-group design with
heterogeneous lattice parameters. Each replicate draws a truth field from
the Ising prior, draws statistics from the emission model, runs the decision
procedures (oracle LIS at the true parameters, GEM-estimated LIS, BH on
two-sided p-values, local-FDR baselines fed the realized null proportion and
true densities), and tallies FDP/FNP/TP. Replicates parallelize over a
process pool; every random stream derives from the master seed and replicate
index, so reports are byte-identical for any worker count.
"""

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import seeding
from .emission import MixtureParams, two_sided_p_from_z
from .fdr import aggregate, bh, lis_stepup, local_fdr, metrics, plis, slis
from .gem import GemConfig, ModelParams, run_gem
from .ising import GibbsConfig, IsingParams, posterior_site_field, run_chain
from .lattice import Lattice3D, build_lattice, write_grid

STUDIES = ("study1", "study2", "twogroup")
_PROCEDURE_ORDER = ("or", "lis", "slis", "plis", "bh", "lfdr", "clfdr")


@dataclass(frozen=True)
class GemSettings:
    """GEM knobs shared across replicates (initial values are per-point)."""

    max_iters: int = 1000
    eps1: float = 1e-3
    eps2: float = 1e-3
    eps3: float = 1e-4
    armijo_alpha: float = 1e-4
    penalty_a: float = 1.0
    penalty_b: float = 2.0
    final_sample_factor: int = 2
    max_backtracks: int = 60


@dataclass(frozen=True)
class StudyConfig:
    """Fully resolved study: design, scale, sweeps, seeds and chain settings."""

    study: str
    dims: tuple = (15, 15, 15)
    replications: int = 200
    alpha: float = 0.10
    sweep_param: str = "beta"
    sweep_values: tuple = ()
    fixed: dict = field(default_factory=dict)
    gibbs: GibbsConfig = GibbsConfig(n_samples=5000, burn_in=1000)
    gem: GemSettings = GemSettings()
    truth_burn_in: int = 1000
    master_seed: int = 0
    workers: int = 1
    dump_decisions: bool = False

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ValueError(f"unknown study {self.study!r}, expected one of {STUDIES}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.sweep_values:
            raise ValueError("sweep grid must be non-empty")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")


# per-study defaults: fixed true parameters and the swept axis
_DESIGNS = {
    "study1": {
        "sweep_param": "beta",
        "sweep_values": (0.0, 0.2, 0.4, 0.6, 0.8, 1.0),
        "fixed": {"beta": 0.8, "h": -2.5, "mu1": 2.0, "sigma2": 1.0},
    },
    "study2": {
        "sweep_param": "mu1",
        "sweep_values": (-4.0, -3.5, -3.0, -2.5, -2.0, -1.5, -1.0),
        "fixed": {"beta": 0.8, "h": -2.5, "p1": 0.5, "mu2": 2.0, "sigma2": 1.0},
    },
    "twogroup": {
        "sweep_param": "mu1",
        "sweep_values": (1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0),
        "fixed": {
            "beta1": 0.2, "h1": -1.0, "beta2": 0.8, "h2": -2.5, "sigma2": 1.0,
        },
    },
}

_SCALES = {
    "paper": {
        "dims": (15, 15, 15),
        "replications": 200,
        "gibbs": GibbsConfig(n_samples=5000, burn_in=1000),
        "gem": GemSettings(max_iters=1000),
    },
    "desk": {
        "dims": (10, 10, 10),
        "replications": 50,
        "gibbs": GibbsConfig(n_samples=1000, burn_in=200),
        "gem": GemSettings(max_iters=35),
    },
}


def study_preset(study: str, scale: str = "desk", **overrides) -> StudyConfig:
    """Named study design at desk or paper scale, with field overrides."""
    if study not in _DESIGNS:
        raise ValueError(f"unknown study {study!r}")
    if scale not in _SCALES:
        raise ValueError(f"unknown scale {scale!r}, expected 'desk' or 'paper'")
    kwargs = {"study": study, **_DESIGNS[study], **_SCALES[scale]}
    fixed = dict(kwargs["fixed"])
    fixed.update(overrides.pop("fixed", {}))
    kwargs["fixed"] = fixed
    kwargs.update(overrides)
    return StudyConfig(**kwargs)


@dataclass(frozen=True)
class GroupSpec:
    """One group's true parameters and the GEM initial values used for it."""

    ising: IsingParams
    mixture: MixtureParams
    init: ModelParams


def resolve_point(config: StudyConfig, sweep_value: float) -> list:
    """Expand one sweep point into per-group true parameters and inits.

    Initial values follow the reference runs: the coupling and field start
    at zero, means one above truth, variances at two, and for the mixture
    design the starting weights are (0.3, 0.7).
    """
    p = dict(config.fixed)
    p[config.sweep_param] = sweep_value
    if config.study == "study1":
        truth = MixtureParams([1.0], [p["mu1"]], [p["sigma2"]])
        init = ModelParams(
            IsingParams(0.0, 0.0), MixtureParams([1.0], [p["mu1"] + 1.0], [2.0])
        )
        return [GroupSpec(IsingParams(p["beta"], p["h"]), truth, init)]
    if config.study == "study2":
        truth = MixtureParams(
            [p["p1"], 1.0 - p["p1"]], [p["mu1"], p["mu2"]], [p["sigma2"], p["sigma2"]]
        )
        init = ModelParams(
            IsingParams(0.0, 0.0),
            MixtureParams([0.3, 0.7], [p["mu1"] + 1.0, p["mu2"] + 1.0], [2.0, 2.0]),
        )
        return [GroupSpec(IsingParams(p["beta"], p["h"]), truth, init)]
    # two groups; the second mean rides one above the swept first mean, and
    # both estimations start at mu1 + 1
    mu1, mu2 = p["mu1"], p["mu1"] + 1.0
    init_mix = MixtureParams([1.0], [mu1 + 1.0], [2.0])
    return [
        GroupSpec(
            IsingParams(p["beta1"], p["h1"]),
            MixtureParams([1.0], [mu1], [p["sigma2"]]),
            ModelParams(IsingParams(0.0, 0.0), init_mix),
        ),
        GroupSpec(
            IsingParams(p["beta2"], p["h2"]),
            MixtureParams([1.0], [mu2], [p["sigma2"]]),
            ModelParams(IsingParams(0.0, 0.0), init_mix),
        ),
    ]


def generate_replicate(
    lattice: Lattice3D, spec: GroupSpec, config: StudyConfig, point: int, rep: int, group: int
):
    """Draw one (truth, statistics) pair for one group.

    The truth field is the state of a prior chain started all-zero after the
    configured burn-in; statistics are drawn per site from the null or the
    mixture according to the truth.
    """
    rng_t = seeding.rng_from_key(config.master_seed, seeding.TRUTH_FIELD, point, rep, group)
    chain = run_chain(
        lattice,
        spec.ising.beta,
        np.full(lattice.n, spec.ising.h),
        GibbsConfig(n_samples=1, burn_in=config.truth_burn_in,
                    sweep_order=config.gibbs.sweep_order),
        collect_samples=True,
        rng=rng_t,
    )
    theta = chain.samples[0]

    rng_e = seeding.rng_from_key(config.master_seed, seeding.EMISSION, point, rep, group)
    mix = spec.mixture
    comp = np.searchsorted(np.cumsum(mix.weights), rng_e.random(lattice.n), side="right")
    comp = np.minimum(comp, mix.weights.size - 1)
    null_draws = rng_e.standard_normal(lattice.n)
    signal_draws = mix.means[comp] + np.sqrt(mix.variances[comp]) * rng_e.standard_normal(
        lattice.n
    )
    x = np.where(theta == 1, signal_draws, null_draws)
    return theta, x


def _oracle_lis(lattice, spec: GroupSpec, x, config, point, rep, group):
    """LIS at the true parameters via one posterior chain."""
    hs = posterior_site_field(spec.ising, spec.mixture, x)
    rng = seeding.rng_from_key(config.master_seed, seeding.ORACLE_CHAIN, point, rep, group)
    cfg = GibbsConfig(
        n_samples=config.gibbs.n_samples * config.gem.final_sample_factor,
        burn_in=config.gibbs.burn_in,
        sweep_order=config.gibbs.sweep_order,
    )
    chain = run_chain(lattice, spec.ising.beta, hs, cfg, rng=rng)
    return 1.0 - chain.site_mean


def _fit_lis(lattice, spec: GroupSpec, x, config, point, rep, group):
    """Data-driven LIS: full GEM fit from the study's initial values."""
    gem_seed = seeding.rng_from_key(
        config.master_seed, seeding.GEM, point, rep, group
    ).integers(2**63)
    gcfg = GemConfig(
        init=spec.init,
        gibbs=replace(config.gibbs, seed=int(gem_seed)),
        eps1=config.gem.eps1,
        eps2=config.gem.eps2,
        eps3=config.gem.eps3,
        armijo_alpha=config.gem.armijo_alpha,
        penalty_a=config.gem.penalty_a,
        penalty_b=config.gem.penalty_b,
        max_iters=config.gem.max_iters,
        max_backtracks=config.gem.max_backtracks,
        final_sample_factor=config.gem.final_sample_factor,
    )
    return run_gem(lattice, x, gcfg)


def run_replicate(config: StudyConfig, point: int, rep: int) -> dict:
    """All procedures on one replicate; returns per-procedure metrics."""
    lattice = build_lattice(config.dims, np.ones(config.dims, dtype=bool))
    specs = resolve_point(config, config.sweep_values[point])
    fields = [
        generate_replicate(lattice, spec, config, point, rep, g)
        for g, spec in enumerate(specs)
    ]
    truth = np.concatenate([t for t, _ in fields])
    stats = [x for _, x in fields]
    out = {"point": point, "rep": rep, "metrics": {}, "failures": {}, "decisions": {}}

    def score(name, decision):
        out["metrics"][name] = metrics(decision, truth)
        out["decisions"][name] = decision

    # oracle and data-driven LIS
    lis_or = [
        _oracle_lis(lattice, spec, x, config, point, rep, g)
        for g, (spec, x) in enumerate(zip(specs, stats))
    ]
    try:
        fits = [
            _fit_lis(lattice, spec, x, config, point, rep, g)
            for g, (spec, x) in enumerate(zip(specs, stats))
        ]
        lis_hat = [f.summary.lis for f in fits]
    except Exception as exc:  # estimation failure: record, keep other procedures
        fits, lis_hat = None, None
        out["failures"]["gem"] = f"{type(exc).__name__}: {exc}"

    if len(specs) == 1:
        score("or", lis_stepup(lis_or[0], config.alpha))
        if lis_hat is not None:
            score("lis", lis_stepup(lis_hat[0], config.alpha))
        pi0 = 1.0 - float(fields[0][0].mean())
        _, dec_lfdr = local_fdr(stats[0], pi0, specs[0].mixture, config.alpha)
        score("lfdr", dec_lfdr)
    else:
        score("or", plis(lis_or, config.alpha))
        if lis_hat is not None:
            dec_plis = plis(lis_hat, config.alpha)
            score("plis", dec_plis)
            score("slis", slis(lis_hat, config.alpha))
            # per-group error rates under the pooled decision
            offset = 0
            for g, (theta, _) in enumerate(fields):
                rej_g = dec_plis.rejected[offset : offset + lattice.n]
                out["metrics"][f"plis_group{g + 1}"] = metrics(rej_g, theta)
                offset += lattice.n
        lfdr_vals = []
        for g, (spec, x) in enumerate(zip(specs, stats)):
            pi0 = 1.0 - float(fields[g][0].mean())
            vals, _ = local_fdr(x, pi0, spec.mixture, config.alpha)
            lfdr_vals.append(vals)
        score("clfdr", plis(lfdr_vals, config.alpha))

    p_values = two_sided_p_from_z(np.concatenate(stats))
    score("bh", bh(p_values, config.alpha))
    out["truth"] = fields if config.dump_decisions else None
    return out


@dataclass
class StudyReport:
    """Aggregated study output: long-format rows plus run metadata."""

    config: dict
    rows: list
    failures: list


def _config_dict(config: StudyConfig) -> dict:
    return {
        "study": config.study,
        "dims": list(config.dims),
        "replications": config.replications,
        "alpha": config.alpha,
        "sweep_param": config.sweep_param,
        "sweep_values": list(config.sweep_values),
        "fixed": dict(sorted(config.fixed.items())),
        "gibbs": {
            "n_samples": config.gibbs.n_samples,
            "burn_in": config.gibbs.burn_in,
            "sweep_order": config.gibbs.sweep_order,
        },
        "gem": {
            "max_iters": config.gem.max_iters,
            "eps1": config.gem.eps1,
            "eps2": config.gem.eps2,
            "eps3": config.gem.eps3,
            "armijo_alpha": config.gem.armijo_alpha,
            "penalty_a": config.gem.penalty_a,
            "penalty_b": config.gem.penalty_b,
            "final_sample_factor": config.gem.final_sample_factor,
            "max_backtracks": config.gem.max_backtracks,
        },
        "truth_burn_in": config.truth_burn_in,
        "master_seed": config.master_seed,
        "dump_decisions": config.dump_decisions,
    }


def _replicate_task(args):
    config, point, rep = args
    return run_replicate(config, point, rep)


def run_study(config: StudyConfig, dump_dir=None) -> StudyReport:
    """Execute the full replication grid and aggregate metrics.

    Results are a pure function of (config, master_seed): replicates carry
    derived seeds and are reduced in (point, replicate) order whatever the
    worker count. GEM failures drop the affected procedures for that
    replicate and are reported, never silently ignored.
    """
    tasks = [
        (config, point, rep)
        for point in range(len(config.sweep_values))
        for rep in range(config.replications)
    ]
    workers = max(1, min(config.workers, _worker_cap()))
    if workers == 1:
        results = [_replicate_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate_task, tasks, chunksize=1))
    results.sort(key=lambda r: (r["point"], r["rep"]))

    if dump_dir is not None and config.dump_decisions:
        _write_dumps(config, results, dump_dir)

    rows, failures = [], []
    for point in range(len(config.sweep_values)):
        point_results = [r for r in results if r["point"] == point]
        procs = sorted(
            {name for r in point_results for name in r["metrics"]},
            key=_procedure_sort_key,
        )
        for proc in procs:
            used = [r["metrics"][proc] for r in point_results if proc in r["metrics"]]
            agg = aggregate(used)
            for metric in ("fdr", "fnr", "atp"):
                mean, se = agg[metric]
                rows.append(
                    {
                        "study": config.study,
                        "sweep_param": config.sweep_param,
                        "sweep_value": config.sweep_values[point],
                        "procedure": proc,
                        "metric": metric,
                        "mean": mean,
                        "mc_se": se,
                        "n_used": agg["n_used"],
                    }
                )
        for r in point_results:
            for stage, message in r["failures"].items():
                failures.append(
                    {
                        "sweep_value": config.sweep_values[point],
                        "replicate": r["rep"],
                        "stage": stage,
                        "message": message,
                    }
                )
    return StudyReport(config=_config_dict(config), rows=rows, failures=failures)


def _procedure_sort_key(name):
    for i, p in enumerate(_PROCEDURE_ORDER):
        if name == p:
            return (i, name)
    return (len(_PROCEDURE_ORDER), name)


def _worker_cap() -> int:
    env = os.environ.get("HMRF_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _write_dumps(config: StudyConfig, results, dump_dir):
    os.makedirs(dump_dir, exist_ok=True)
    lattice = build_lattice(config.dims, np.ones(config.dims, dtype=bool))
    for r in results:
        tag = f"p{r['point']}_r{r['rep']}"
        for g, (theta, x) in enumerate(r["truth"]):
            write_grid(
                os.path.join(dump_dir, f"{tag}_g{g}_truth.grid"),
                lattice.embed(theta, fill=0).astype(np.uint8),
                "mask",
            )
            write_grid(
                os.path.join(dump_dir, f"{tag}_g{g}_z.grid"), lattice.embed(x), "stat"
            )
        for proc, dec in r["decisions"].items():
            for g, rej in enumerate(dec.by_group()):
                write_grid(
                    os.path.join(dump_dir, f"{tag}_g{g}_{proc}.grid"),
                    lattice.embed(rej, fill=0).astype(np.uint8),
                    "mask",
                )


def emit_report(report: StudyReport, out_dir) -> dict:
    """Write report.csv (long format) and report.json (metadata); returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "report.csv")
    json_path = os.path.join(out_dir, "report.json")
    columns = [
        "study", "sweep_param", "sweep_value", "procedure", "metric",
        "mean", "mc_se", "n_used",
    ]
    try:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in report.rows:
                writer.writerow([_fmt(row[c]) for c in columns])
        with open(json_path, "w") as fh:
            json.dump(
                {"config": report.config, "failures": report.failures,
                 "n_rows": len(report.rows)},
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write report under {out_dir}: {exc}") from exc
    return {"csv": csv_path, "json": json_path}


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value
