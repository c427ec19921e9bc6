"""Command-line interface: simulate, ingest, analyze, bh, version.

Every run resolves its configuration from preset defaults, an optional JSON
config file, and flag overrides (in that order), then writes the resolved
form next to its outputs as ``resolved_config.json``; re-running from that
echo reproduces the outputs byte for byte. Exit codes: 0 success, 1 runtime
failure, 2 usage or configuration error. Error lines are prefixed
``error:``.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__, seeding
from .emission import GroupSummary, MixtureParams, t_to_z, two_sided_p_from_z, welch_t
from .fdr import bh as bh_procedure
from .fdr import plis
from .gem import GemConfig, ModelParams, run_gem
from .harness import GemSettings, StudyConfig, emit_report, run_study, study_preset
from .ising import GibbsConfig, IsingParams
from .lattice import GridFormatError, build_lattice, read_grid, sublattice, write_grid

MIN_GROUP_VOXELS = 150  # smaller ROIs are fitted but flagged


class ConfigError(ValueError):
    """Configuration or usage problem (exit code 2)."""


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _load_json(path) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc


def _write_resolved(config: dict, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "resolved_config.json")
    with open(path, "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _simulate_config(args) -> StudyConfig:
    file_cfg = _load_json(args.config) if args.config else {}
    preset = args.preset or file_cfg.get("preset")
    scale = args.scale or file_cfg.get("scale", "desk")
    if preset is None:
        raise ConfigError("simulate needs --preset or a config file with a 'preset' key")

    base = study_preset(preset, scale)
    cfg_dict = {
        "preset": preset,
        "scale": scale,
        "dims": list(base.dims),
        "replications": base.replications,
        "alpha": base.alpha,
        "sweep_param": base.sweep_param,
        "sweep_values": list(base.sweep_values),
        "fixed": dict(base.fixed),
        "gibbs": {
            "n_samples": base.gibbs.n_samples,
            "burn_in": base.gibbs.burn_in,
            "sweep_order": base.gibbs.sweep_order,
        },
        "gem": {
            "max_iters": base.gem.max_iters,
            "eps1": base.gem.eps1,
            "eps2": base.gem.eps2,
            "eps3": base.gem.eps3,
            "armijo_alpha": base.gem.armijo_alpha,
            "penalty_a": base.gem.penalty_a,
            "penalty_b": base.gem.penalty_b,
            "final_sample_factor": base.gem.final_sample_factor,
            "max_backtracks": base.gem.max_backtracks,
        },
        "truth_burn_in": base.truth_burn_in,
        "seed": 0,
        "workers": 1,
        "dump_decisions": False,
    }
    for key, value in file_cfg.items():
        if key in ("preset", "scale"):
            continue
        if key not in cfg_dict:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(cfg_dict[key], dict):
            for sub, subval in value.items():
                if sub not in cfg_dict[key]:
                    raise ConfigError(f"unknown config key {key}.{sub!r}")
                cfg_dict[key][sub] = subval
        else:
            cfg_dict[key] = value

    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    if args.replications is not None:
        cfg_dict["replications"] = args.replications
    if args.dims is not None:
        cfg_dict["dims"] = args.dims
    if args.alpha is not None:
        cfg_dict["alpha"] = args.alpha
    if args.workers is not None:
        cfg_dict["workers"] = args.workers
    if args.dump_decisions:
        cfg_dict["dump_decisions"] = True
    if args.sweep_param is not None:
        cfg_dict["sweep_param"] = args.sweep_param
        if args.sweep_values is None:
            raise ConfigError("--sweep-param needs --sweep-values")
    if args.sweep_values is not None:
        cfg_dict["sweep_values"] = args.sweep_values
    for name in ("beta", "h", "mu1"):
        value = getattr(args, name if name != "h" else "field_h")
        if value is None:
            continue
        if cfg_dict["sweep_param"] == name:
            cfg_dict["sweep_values"] = [value]
        else:
            if name not in cfg_dict["fixed"]:
                raise ConfigError(f"parameter {name!r} does not apply to preset {preset!r}")
            cfg_dict["fixed"][name] = value

    try:
        study = StudyConfig(
            study=preset,
            dims=tuple(cfg_dict["dims"]),
            replications=int(cfg_dict["replications"]),
            alpha=float(cfg_dict["alpha"]),
            sweep_param=cfg_dict["sweep_param"],
            sweep_values=tuple(float(v) for v in cfg_dict["sweep_values"]),
            fixed={k: float(v) for k, v in cfg_dict["fixed"].items()},
            gibbs=GibbsConfig(
                n_samples=int(cfg_dict["gibbs"]["n_samples"]),
                burn_in=int(cfg_dict["gibbs"]["burn_in"]),
                sweep_order=cfg_dict["gibbs"]["sweep_order"],
            ),
            gem=GemSettings(**cfg_dict["gem"]),
            truth_burn_in=int(cfg_dict["truth_burn_in"]),
            master_seed=int(cfg_dict["seed"]),
            workers=int(cfg_dict["workers"]),
            dump_decisions=bool(cfg_dict["dump_decisions"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return study, cfg_dict


def cmd_simulate(args) -> int:
    study, cfg_dict = _simulate_config(args)
    _write_resolved(cfg_dict, args.out)
    dump_dir = os.path.join(args.out, "dumps") if study.dump_decisions else None
    report = run_study(study, dump_dir=dump_dir)
    paths = emit_report(report, args.out)
    print(f"wrote {paths['csv']} and {paths['json']}")
    if report.failures:
        print(f"{len(report.failures)} replicate failures recorded in report.json")
    return 0


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------


def _read_subject_table(path):
    """Rows of (x, y, z, subject, group, value); header optional."""
    if not os.path.exists(path):
        raise ConfigError(f"subject table not found: {path}")
    rows, bad = [], []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec:
                continue
            if lineno == 1 and not rec[0].strip().lstrip("-").isdigit():
                continue  # header
            if len(rec) != 6:
                bad.append((lineno, f"expected 6 columns, got {len(rec)}"))
                continue
            try:
                rows.append(
                    (int(rec[0]), int(rec[1]), int(rec[2]), rec[3].strip(),
                     rec[4].strip(), float(rec[5]))
                )
            except ValueError as exc:
                bad.append((lineno, str(exc)))
    return rows, bad


def cmd_ingest(args) -> int:
    rows, bad_rows = _read_subject_table(args.table)
    if bad_rows:
        for lineno, reason in bad_rows:
            print(f"error: {args.table}:{lineno}: {reason}", file=sys.stderr)
        return 2
    if not rows:
        raise ConfigError(f"no usable rows in {args.table}")
    groups = sorted({r[4] for r in rows})
    if len(groups) != 2:
        raise ConfigError(f"need exactly 2 groups, found {groups}")

    if args.mask:
        mask_grid, kind = read_grid(args.mask)
        if kind != "mask":
            raise ConfigError(f"{args.mask} is a {kind} grid, expected a mask")
        dims = mask_grid.shape
        mask = mask_grid.astype(bool)
    else:
        dims = tuple(int(max(r[i] for r in rows)) + 1 for i in range(3))
        mask = np.ones(dims, dtype=bool)

    per_voxel = {}
    exclusions = []
    for x, y, z, subject, group, value in rows:
        if not (0 <= x < dims[0] and 0 <= y < dims[1] and 0 <= z < dims[2]) or not mask[x, y, z]:
            exclusions.append((x, y, z, "outside mask"))
            continue
        per_voxel.setdefault((x, y, z), {g: [] for g in groups})[group].append(value)

    z_grid = np.full(dims, np.nan)
    for (vx, vy, vz), by_group in sorted(per_voxel.items()):
        counts = [len(by_group[g]) for g in groups]
        if min(counts) < 2:
            exclusions.append((vx, vy, vz, f"fewer than 2 subjects per group: {counts}"))
            continue
        sums = [np.asarray(by_group[g], dtype=np.float64) for g in groups]
        variances = [float(v.var(ddof=1)) for v in sums]
        if max(variances) == 0.0:
            exclusions.append((vx, vy, vz, "zero variance in both groups"))
            continue
        t, df = welch_t(
            GroupSummary(counts[0], float(sums[0].mean()), variances[0]),
            GroupSummary(counts[1], float(sums[1].mean()), variances[1]),
        )
        z_grid[vx, vy, vz] = t_to_z(t, df)

    if not np.isfinite(z_grid).any():
        raise ConfigError("every voxel was excluded; nothing to write")
    write_grid(args.out, z_grid, "stat")
    log_path = args.out + ".exclusions.csv"
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y", "z", "reason"])
        for row in exclusions:
            writer.writerow(row)
    for lineno, reason in bad_rows:
        print(f"error: {args.table}:{lineno}: {reason}", file=sys.stderr)
    print(f"wrote {args.out} ({int(np.isfinite(z_grid).sum())} voxels, "
          f"{len(exclusions)} excluded, log at {log_path})")
    return 0 if not bad_rows else 0


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------


def _initial_mixture_from_bh(z_values, p_values, level, n_components, rng):
    """Starting mixture fitted on the statistics BH flags at ``level``.

    A plain normal-mixture EM runs on the selected values; with too few
    selections the start falls back to spread quantile centers.
    """
    selected = z_values[bh_procedure(p_values, level).rejected]
    if selected.size < 5 * n_components:
        center = float(z_values.mean())
        spread = np.linspace(-1.0, 1.0, n_components) if n_components > 1 else np.zeros(1)
        return MixtureParams(
            np.full(n_components, 1.0 / n_components),
            center + spread,
            np.full(n_components, 2.0),
        )
    return _fit_mixture_em(selected, n_components, rng)


def _fit_mixture_em(values, n_components, rng, n_iter=200):
    """Classic EM for an unconstrained normal mixture on raw values."""
    qs = np.quantile(values, np.linspace(0.1, 0.9, n_components))
    means = qs.astype(np.float64)
    variances = np.full(n_components, max(float(values.var()), 0.25))
    weights = np.full(n_components, 1.0 / n_components)
    x = values[:, None]
    for _ in range(n_iter):
        log_pdf = (
            -0.5 * ((x - means) ** 2 / variances + np.log(2 * np.pi * variances))
            + np.log(weights)
        )
        log_pdf -= log_pdf.max(axis=1, keepdims=True)
        r = np.exp(log_pdf)
        r /= r.sum(axis=1, keepdims=True)
        mass = r.sum(axis=0)
        if (mass < 1e-9).any():
            break
        weights = mass / mass.sum()
        means = (r * x).sum(axis=0) / mass
        variances = (r * (x - means) ** 2).sum(axis=0) / mass
        variances = np.maximum(variances, 1e-3)
    return MixtureParams(weights, means, variances)


def cmd_analyze(args) -> int:
    z_grid, kind = read_grid(args.stats)
    if kind != "stat":
        raise ConfigError(f"{args.stats} is a {kind} grid, expected statistics")
    dims = z_grid.shape
    if args.mask:
        mask_grid, kind = read_grid(args.mask)
        if kind != "mask" or mask_grid.shape != dims:
            raise ConfigError(f"{args.mask} is not a mask grid matching {dims}")
        mask = mask_grid.astype(bool)
    else:
        mask = np.isfinite(z_grid)
    if args.groups:
        label_grid, kind = read_grid(args.groups)
        if kind != "labels" or label_grid.shape != dims:
            raise ConfigError(f"{args.groups} is not a labels grid matching {dims}")
        label_grid = label_grid.astype(np.int32)
        label_grid[~mask] = 0
    else:
        label_grid = np.zeros(dims, dtype=np.int32)

    mask &= np.isfinite(z_grid)
    lattice = build_lattice(dims, mask, label_grid)
    z = lattice.extract(z_grid)
    p_values = two_sided_p_from_z(z)

    cfg_dict = {
        "stats": args.stats,
        "mask": args.mask,
        "groups": args.groups,
        "alpha": args.alpha,
        "n_components": args.components,
        "bh_init_level": args.bh_init_level,
        "gibbs": {
            "n_samples": args.gibbs_samples,
            "burn_in": args.gibbs_burn_in,
            "sweep_order": "checkerboard",
        },
        "gem_max_iters": args.gem_max_iters,
        "seed": args.seed,
    }
    _write_resolved(cfg_dict, args.out)

    group_ids = np.unique(lattice.group_labels)
    fit_reports, group_lis, group_sites = [], [], []
    for gid in group_ids:
        keep = lattice.group_labels == gid
        sub, parent = sublattice(lattice, keep)
        z_g = z[parent]
        flags = []
        if sub.n < MIN_GROUP_VOXELS:
            flags.append(f"small group ({sub.n} voxels)")
            print(f"warning: group {gid} has only {sub.n} voxels", file=sys.stderr)
        rng = seeding.rng_from_key(args.seed, seeding.ANALYZE, int(gid))
        init = ModelParams(
            IsingParams(0.0, 0.0),
            _initial_mixture_from_bh(
                z_g, two_sided_p_from_z(z_g), args.bh_init_level, args.components, rng
            ),
        )
        gem_cfg = GemConfig(
            init=init,
            gibbs=GibbsConfig(
                n_samples=args.gibbs_samples,
                burn_in=args.gibbs_burn_in,
                seed=int(rng.integers(2**63)),
            ),
            max_iters=args.gem_max_iters,
        )
        entry = {"group": int(gid), "n_voxels": int(sub.n), "flags": flags}
        try:
            fit = run_gem(sub, z_g, gem_cfg)
            entry.update(
                {
                    "beta": fit.params.ising.beta,
                    "h": fit.params.ising.h,
                    "weights": fit.params.mixture.weights.tolist(),
                    "means": fit.params.mixture.means.tolist(),
                    "variances": fit.params.mixture.variances.tolist(),
                    "converged": fit.trace.converged,
                    "iterations": fit.trace.iterations,
                    "pseudo_loglik": fit.trace.pseudo_loglik,
                }
            )
            group_lis.append(fit.summary.lis)
            group_sites.append(parent)
        except Exception as exc:
            entry["error"] = f"{type(exc).__name__}: {exc}"
            print(f"warning: group {gid} excluded from pooling: {exc}", file=sys.stderr)
        fit_reports.append(entry)

    if not group_lis:
        raise RuntimeError("no group produced usable LIS values")

    decision = plis(group_lis, args.alpha)
    sites = np.concatenate(group_sites)
    rejected = np.zeros(lattice.n, dtype=bool)
    rejected[sites] = decision.rejected
    bh_decision = bh_procedure(p_values, args.alpha)

    _write_decisions(
        os.path.join(args.out, "decisions_plis.csv"), lattice, z, rejected
    )
    _write_decisions(
        os.path.join(args.out, "decisions_bh.csv"), lattice, z, bh_decision.rejected
    )
    summary = {
        "plis": {"k": int(rejected.sum()), "threshold": decision.threshold,
                 "alpha": args.alpha, "procedure": "PLIS"},
        "bh": {"k": int(bh_decision.k), "threshold": bh_decision.threshold,
               "alpha": args.alpha, "procedure": "BH"},
        "groups": fit_reports,
    }
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    if args.lis_grid:
        lis_all = np.ones(lattice.n)
        lis_all[sites] = np.concatenate(group_lis)
        write_grid(os.path.join(args.out, "lis.grid"), lattice.embed(lis_all), "stat")
    print(
        f"PLIS rejected {int(rejected.sum())} of {lattice.n} voxels at alpha={args.alpha} "
        f"(BH: {bh_decision.k}); reports in {args.out}"
    )
    return 0


def _write_decisions(path, lattice, z, rejected):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y", "z", "statistic", "rejected"])
        for s in range(lattice.n):
            vx, vy, vz = (int(v) for v in lattice.site_xyz[s])
            writer.writerow([vx, vy, vz, repr(float(z[s])), int(rejected[s])])


# ---------------------------------------------------------------------------
# bh / version
# ---------------------------------------------------------------------------


def cmd_bh(args) -> int:
    if not os.path.exists(args.pvalues):
        raise ConfigError(f"p-value file not found: {args.pvalues}")
    values = []
    with open(args.pvalues) as fh:
        for lineno, line in enumerate(fh, start=1):
            token = line.strip().split(",")[-1]
            if not token or (lineno == 1 and not _is_float(token)):
                continue
            if not _is_float(token):
                raise ConfigError(f"{args.pvalues}:{lineno}: not a number: {token!r}")
            values.append(float(token))
    if not values:
        raise ConfigError(f"no p-values in {args.pvalues}")
    try:
        res = bh_procedure(np.array(values), args.alpha)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    print(f"rejected {res.k} of {len(values)} at alpha={args.alpha} "
          f"(threshold={res.threshold})")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", "p_value", "rejected"])
            for i, (p, r) in enumerate(zip(values, res.rejected)):
                writer.writerow([i, repr(p), int(r)])
    return 0


def _is_float(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


# ---------------------------------------------------------------------------
# parser and entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hmrf-fdr",
        description="Spatial multiple testing with an Ising-prior hidden MRF",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a replicated simulation study")
    sim.add_argument("--preset", choices=("study1", "study2", "twogroup"))
    sim.add_argument("--scale", choices=("desk", "paper"))
    sim.add_argument("--config", help="JSON config file (preset defaults + overrides)")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--replications", type=int)
    sim.add_argument("--dims", type=int, nargs=3, metavar=("NX", "NY", "NZ"))
    sim.add_argument("--alpha", type=float)
    sim.add_argument("--beta", type=float, help="pin the coupling (single point if swept)")
    sim.add_argument("--h", dest="field_h", type=float, help="pin the external field")
    sim.add_argument("--mu1", type=float, help="pin the first nonnull mean")
    sim.add_argument("--sweep-param", choices=("beta", "h", "mu1"))
    sim.add_argument("--sweep-values", type=float, nargs="+")
    sim.add_argument("--workers", type=int)
    sim.add_argument("--dump-decisions", action="store_true")
    sim.add_argument("--out", default="study_out")
    sim.set_defaults(func=cmd_simulate)

    ing = sub.add_parser("ingest", help="subject table -> z-statistic grid")
    ing.add_argument("--table", required=True, help="CSV: x,y,z,subject,group,value")
    ing.add_argument("--mask", help="mask grid file")
    ing.add_argument("--out", required=True, help="output z grid path")
    ing.set_defaults(func=cmd_ingest)

    ana = sub.add_parser("analyze", help="per-group fits + pooled decision")
    ana.add_argument("--stats", required=True, help="z-statistic grid")
    ana.add_argument("--mask", help="mask grid")
    ana.add_argument("--groups", help="labels grid (one HMRF per label)")
    ana.add_argument("--alpha", type=float, default=0.001)
    ana.add_argument("--components", type=int, default=2, help="nonnull mixture size")
    ana.add_argument("--bh-init-level", type=float, default=0.1)
    ana.add_argument("--gibbs-samples", type=int, default=5000)
    ana.add_argument("--gibbs-burn-in", type=int, default=1000)
    ana.add_argument("--gem-max-iters", type=int, default=5000)
    ana.add_argument("--seed", type=int, default=0)
    ana.add_argument("--lis-grid", action="store_true", help="also write per-voxel LIS")
    ana.add_argument("--out", default="analysis_out")
    ana.set_defaults(func=cmd_analyze)

    bhp = sub.add_parser("bh", help="standalone BH on a p-value list")
    bhp.add_argument("--pvalues", required=True)
    bhp.add_argument("--alpha", type=float, default=0.05)
    bhp.add_argument("--out")
    bhp.set_defaults(func=cmd_bh)

    ver = sub.add_parser("version", help="print version")
    ver.set_defaults(func=lambda args: print(f"hmrf-fdr {__version__}") or 0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args) or 0
    except ConfigError as exc:
        return _fail(str(exc), 2)
    except GridFormatError as exc:
        return _fail(str(exc), 2)
    except Exception as exc:  # runtime failure
        return _fail(f"{type(exc).__name__}: {exc}", 1)


if __name__ == "__main__":
    sys.exit(main())
