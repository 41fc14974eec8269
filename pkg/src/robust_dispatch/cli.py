"""Command-line driver for the dispatch experiments.

Subcommands: ingest, synth, build-sets, solve-once, simulate,
cross-validate, sweep-epsilon, sweep-alpha.  Common flags: --config
<file>, --seed <u64>, --out <dir>.  Every writer is deterministic: CSV
floats use shortest round-trip repr, JSON keys are sorted, and nothing
records wall-clock time, so two runs with the same config and seed
produce byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
from dataclasses import replace

import numpy as np

from .harness import (
    Policy,
    RunMetrics,
    build_demand_model,
    cross_validate,
    run_receding_horizon,
    score_plan,
    solve_policy,
    split_by_date,
    sweep_alpha,
    sweep_epsilon,
)
from .ingest import (
    RegionGrid,
    SampleSet,
    TimeDiscretization,
    aggregate_demand,
    build_weight_matrix,
    estimate_transition,
    generator_config_from_json,
    group_samples,
    parse_trips,
    read_sample_archive,
    synth_generate,
    write_sample_archive,
)
from .model import DispatchInstance, NominalDemand, build_nominal
from .reform import RobustProblemSpec, robust_counterpart
from .solve import SolverOptions, solve, write_solution
from .uncertainty import (
    BootstrapConfig,
    bootstrap_box,
    bootstrap_soc,
    compute_s_index,
    deserialize_set,
    serialize_set,
    set_width,
)

CONFIG_SCHEMA = """\
Config file schema (JSON object; defaults in parentheses):
  n              int, number of regions; must equal grid rows*cols
  tau            int, planning horizon in slots
  grid           {"bbox": [lon0, lat0, lon1, lat1], "rows": R, "cols": C}
  slot_seconds   int, slot length; must divide 86400 (3600)
  alpha          float > 0, equity exponent (0.1)
  beta           float >= 0, equity weight (10.0)
  m              float or [float]*tau, per-stage distance cap
  epsilon        float in (0,1), guarantee violation level (0.25)
  alpha_h        float in (0,1), bootstrap confidence level (0.05)
  n_boot         int >= 2, bootstrap replicates (200)
  resample_size  int or null, per-replicate draw size (null = auto)
  cov_norm       "fro" | "spectral", covariance deviation norm ("fro")
  policy         "nonrobust" | "robust_box" | "robust_soc"
  solver         {"tol": f, "max_iter": i} (1e-7, 200)
  fleet          [float]*n, or a scalar total split evenly
  weight_scale   float > 0, degrees-to-distance factor for W (1.0)
  transition     "uniform" | "identity" | [[...]] row-stochastic ("uniform")
  t              int, start slot for samples (0)
  label          str, sample-set label ("all")
  split_ratio    float in (0,1), train fraction by date (0.7)
  steps          int, receding-horizon length for simulate (tau)
  epsilons       [float], sweep-epsilon grid ([0.1,0.2,0.25,0.3,0.5])
  alphas         [float], sweep-alpha grid ([1.0,0.5,0.25,0.1])
  alpha_demand   [float]*(tau*n) or null; sweep-alpha demand (sample mean)
  generator      synthetic mixture spec, see generator_config_from_json
"""

DEFAULTS = {
    "slot_seconds": 3600,
    "alpha": 0.1,
    "beta": 10.0,
    "epsilon": 0.25,
    "alpha_h": 0.05,
    "n_boot": 200,
    "resample_size": None,
    "cov_norm": "fro",
    "policy": "robust_soc",
    "solver": {"tol": 1e-7, "max_iter": 200},
    "weight_scale": 1.0,
    "transition": "uniform",
    "t": 0,
    "label": "all",
    "split_ratio": 0.7,
    "epsilons": [0.1, 0.2, 0.25, 0.3, 0.5],
    "alphas": [1.0, 0.5, 0.25, 0.1],
    "alpha_demand": None,
}


def load_config(path: str) -> dict:
    """Read and normalize a config file; see CONFIG_SCHEMA."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    cfg = dict(DEFAULTS)
    cfg.update(doc)
    for key in ("n", "tau", "grid", "m", "fleet"):
        if key not in cfg:
            raise ValueError(f"config missing required key {key!r}")
    return cfg


def build_grid(cfg: dict) -> RegionGrid:
    g = cfg["grid"]
    grid = RegionGrid(bbox=tuple(g["bbox"]), rows=int(g["rows"]), cols=int(g["cols"]))
    if grid.n != int(cfg["n"]):
        raise ValueError(f"config n={cfg['n']} but grid has {grid.n} cells")
    return grid


def build_instance(cfg: dict) -> DispatchInstance:
    grid = build_grid(cfg)
    n, tau = int(cfg["n"]), int(cfg["tau"])
    W = build_weight_matrix(grid, float(cfg["weight_scale"]))
    tr = cfg["transition"]
    if tr == "uniform":
        P_one = np.full((n, n), 1.0 / n)
    elif tr == "identity":
        P_one = np.eye(n)
    else:
        P_one = np.asarray(tr, dtype=float)
    fleet = cfg["fleet"]
    if np.isscalar(fleet):
        L1 = np.full(n, float(fleet) / n)
    else:
        L1 = np.asarray(fleet, dtype=float)
    m = cfg["m"]
    m = tuple(float(v) for v in m) if isinstance(m, (list, tuple)) else float(m)
    return DispatchInstance(
        n=n,
        tau=tau,
        W=W,
        P=(P_one,) * (tau - 1),
        L1=L1,
        m=m,
        alpha=float(cfg["alpha"]),
        beta=float(cfg["beta"]),
    )


def build_bootstrap(cfg: dict, seed: int) -> BootstrapConfig:
    return BootstrapConfig(
        n_boot=int(cfg["n_boot"]),
        alpha_h=float(cfg["alpha_h"]),
        epsilon=float(cfg["epsilon"]),
        seed=seed,
        resample_size=cfg["resample_size"],
        cov_norm=cfg["cov_norm"],
    )


def build_policy(cfg: dict, seed: int) -> Policy:
    kind = cfg["policy"]
    solver = SolverOptions(
        tol=float(cfg["solver"].get("tol", 1e-7)),
        max_iter=int(cfg["solver"].get("max_iter", 200)),
        seed=seed,
    )
    boot = None if kind == "nonrobust" else build_bootstrap(cfg, seed)
    return Policy(kind=kind, solver=solver, bootstrap=boot)


def load_samples(cfg: dict, directory: str) -> SampleSet:
    sets = read_sample_archive(directory)
    key = (int(cfg["t"]), cfg["label"])
    if key not in sets:
        raise ValueError(f"no sample file for (t, label) = {key} in {directory}")
    return sets[key]


# ---------------------------------------------------------------------------
# deterministic writers


def _plain(value):
    if isinstance(value, float) and math.isnan(value):
        return None
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def write_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_plain(doc), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def metrics_doc(metrics: RunMetrics) -> dict:
    return {
        "mean_mismatch": metrics.mean_mismatch,
        "mean_idle_distance": metrics.mean_idle_distance,
        "mean_cost": metrics.mean_cost,
        "guarantee_fraction": metrics.guarantee_fraction,
        "hist_edges": list(metrics.hist_edges),
        "hist_counts": list(metrics.hist_counts),
    }


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args) -> int:
    cfg = load_config(args.config)
    grid = build_grid(cfg)
    disc = TimeDiscretization(slot_seconds=int(cfg["slot_seconds"]))
    result = parse_trips(args.trips)
    samples = aggregate_demand(result.trips, grid, disc, int(cfg["tau"]), label=cfg["label"])
    sets = group_samples(samples)
    os.makedirs(args.out, exist_ok=True)
    written = write_sample_archive(args.out, sets)
    trans = estimate_transition(result.trips, grid, disc, int(cfg["t"]))
    write_json(
        os.path.join(args.out, "transition.json"),
        {"slot": int(cfg["t"]), "P": trans.P},
    )
    write_json(
        os.path.join(args.out, "summary.json"),
        {
            "command": "ingest",
            "trips": len(result.trips),
            "skipped": result.skipped,
            "skip_reasons": dict(result.skip_reasons),
            "sample_files": [os.path.basename(p) for p in written],
            "sample_counts": {f"t{t}_{lab}": len(s.samples) for (t, lab), s in sets.items()},
        },
    )
    return 0


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    if "generator" not in cfg:
        raise ValueError("synth needs a 'generator' entry in the config")
    gen = generator_config_from_json(json.dumps(cfg["generator"]))
    samples = synth_generate(gen, seed=args.seed)
    sets = group_samples(samples)
    os.makedirs(args.out, exist_ok=True)
    written = write_sample_archive(args.out, sets)
    write_json(
        os.path.join(args.out, "summary.json"),
        {
            "command": "synth",
            "seed": args.seed,
            "n_samples": len(samples),
            "sample_files": [os.path.basename(p) for p in written],
        },
    )
    return 0


def cmd_build_sets(args) -> int:
    cfg = load_config(args.config)
    samples = load_samples(cfg, args.samples)
    boot = build_bootstrap(cfg, args.seed)
    box = bootstrap_box(samples, boot)
    soc = bootstrap_soc(samples, boot)
    os.makedirs(args.out, exist_ok=True)
    for name, uset in (("box", box), ("soc", soc)):
        with open(os.path.join(args.out, f"{name}.txt"), "w", encoding="utf-8") as fh:
            fh.write(serialize_set(uset))
    s = compute_s_index(
        boot.effective_resample_size, boot.alpha_h, boot.epsilon, 1, samples.dim
    )
    write_json(
        os.path.join(args.out, "summary.json"),
        {
            "command": "build-sets",
            "seed": args.seed,
            "n_samples": len(samples.samples),
            "s_index": s,
            "box_width": set_width(box),
            "soc_gamma1": soc.gamma1,
            "soc_gamma2": soc.gamma2,
            "soc_w_bound": soc.w_bound,
        },
    )
    return 0


def cmd_solve_once(args) -> int:
    cfg = load_config(args.config)
    instance = build_instance(cfg)
    if args.set:
        with open(args.set, encoding="utf-8") as fh:
            uset = deserialize_set(fh.read())
        program = robust_counterpart(RobustProblemSpec(instance, uset))
        solver = SolverOptions(
            tol=float(cfg["solver"].get("tol", 1e-7)),
            max_iter=int(cfg["solver"].get("max_iter", 200)),
            seed=args.seed,
        )
        sol = solve(program, solver)
        model_note = f"set:{type(uset).__name__}"
    else:
        if not args.samples:
            raise ValueError("solve-once needs --samples or --set")
        samples = load_samples(cfg, args.samples)
        policy = build_policy(cfg, args.seed)
        model = build_demand_model(policy, instance, samples)
        sol = solve_policy(policy, instance, model)
        model_note = f"policy:{policy.kind}"
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "solution.txt"), "w", encoding="utf-8") as fh:
        write_solution(fh, sol)
    write_json(
        os.path.join(args.out, "summary.json"),
        {
            "command": "solve-once",
            "seed": args.seed,
            "model": model_note,
            "status": sol.status,
            "objective": sol.objective,
            "iterations": sol.iterations,
            "max_primal_residual": sol.residuals.max_primal,
            "rel_gap": sol.residuals.rel_gap,
        },
    )
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    instance = build_instance(cfg)
    samples = load_samples(cfg, args.samples)
    policy = build_policy(cfg, args.seed)
    steps = int(cfg.get("steps", instance.tau))
    rows = samples.matrix()
    if steps > rows.shape[0]:
        raise ValueError(f"config asks for {steps} steps but only {rows.shape[0]} samples exist")
    realized = rows[:steps, : instance.n]
    model = build_demand_model(policy, instance, samples)
    metrics = run_receding_horizon(instance, policy, [model] * steps, realized)
    os.makedirs(args.out, exist_ok=True)
    write_csv(
        os.path.join(args.out, "steps.csv"),
        ["step", "mismatch", "idle_distance", "weighted_cost"],
        [
            (t, metrics.mismatch[t], metrics.idle_distance[t], metrics.weighted_cost[t])
            for t in range(steps)
        ],
    )
    write_json(
        os.path.join(args.out, "summary.json"),
        {"command": "simulate", "seed": args.seed, "policy": policy.kind, "steps": steps}
        | metrics_doc(metrics),
    )
    return 0


def cmd_cross_validate(args) -> int:
    cfg = load_config(args.config)
    instance = build_instance(cfg)
    samples = load_samples(cfg, args.samples)
    base = Policy(kind="nonrobust", solver=build_policy(cfg, args.seed).solver)
    policy = build_policy(cfg, args.seed)
    pair = (base, policy)
    m_base, m_pol = cross_validate(instance, samples, float(cfg["split_ratio"]), pair)
    os.makedirs(args.out, exist_ok=True)
    n_test = len(m_base.weighted_cost)
    write_csv(
        os.path.join(args.out, "test_samples.csv"),
        [
            "sample",
            "cost_nonrobust",
            f"cost_{policy.kind}",
            "mismatch_nonrobust",
            f"mismatch_{policy.kind}",
        ],
        [
            (
                i,
                m_base.weighted_cost[i],
                m_pol.weighted_cost[i],
                m_base.mismatch[i],
                m_pol.mismatch[i],
            )
            for i in range(n_test)
        ],
    )
    write_json(
        os.path.join(args.out, "summary.json"),
        {
            "command": "cross-validate",
            "seed": args.seed,
            "split_ratio": cfg["split_ratio"],
            "n_test": n_test,
            "nonrobust": metrics_doc(m_base),
            policy.kind: metrics_doc(m_pol),
        },
    )
    return 0


def cmd_sweep_epsilon(args) -> int:
    cfg = load_config(args.config)
    instance = build_instance(cfg)
    samples = load_samples(cfg, args.samples)
    policy = build_policy(cfg, args.seed)
    if policy.kind == "nonrobust":
        raise ValueError("sweep-epsilon needs a robust policy kind in the config")
    rows = sweep_epsilon(
        instance,
        samples,
        policy.kind,
        [float(e) for e in cfg["epsilons"]],
        split_ratio=float(cfg["split_ratio"]),
        bootstrap=policy.bootstrap,
        solver=policy.solver,
    )
    os.makedirs(args.out, exist_ok=True)
    write_csv(
        os.path.join(args.out, "epsilon_sweep.csv"),
        ["policy", "epsilon", "robust_optimum", "mean_test_cost", "guarantee_fraction"],
        [
            (r.policy, r.epsilon, r.optimum, r.mean_test_cost, r.guarantee_fraction)
            for r in rows
        ],
    )
    write_json(
        os.path.join(args.out, "summary.json"),
        {
            "command": "sweep-epsilon",
            "seed": args.seed,
            "rows": [
                {
                    "policy": r.policy,
                    "epsilon": r.epsilon,
                    "optimum": r.optimum,
                    "mean_test_cost": r.mean_test_cost,
                    "guarantee_fraction": r.guarantee_fraction,
                }
                for r in rows
            ],
        },
    )
    return 0


def cmd_sweep_alpha(args) -> int:
    cfg = load_config(args.config)
    instance = build_instance(cfg)
    if cfg["alpha_demand"] is not None:
        r = np.asarray(cfg["alpha_demand"], dtype=float)
    else:
        samples = load_samples(cfg, args.samples)
        r = samples.matrix().mean(axis=0)
    demand = NominalDemand(r=r.reshape(instance.tau, instance.n))
    rows = sweep_alpha(
        instance,
        demand,
        [float(a) for a in cfg["alphas"]],
        solver=build_policy(cfg, args.seed).solver,
    )
    os.makedirs(args.out, exist_ok=True)
    write_csv(
        os.path.join(args.out, "alpha_sweep.csv"),
        ["alpha", "optimal_mismatch"],
        [(row.alpha, row.optimal_mismatch) for row in rows],
    )
    write_json(
        os.path.join(args.out, "summary.json"),
        {
            "command": "sweep-alpha",
            "seed": args.seed,
            "rows": [{"alpha": row.alpha, "optimal_mismatch": row.optimal_mismatch} for row in rows],
        },
    )
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robust-dispatch",
        description=__doc__,
        epilog=CONFIG_SCHEMA,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, samples=False):
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
        p.add_argument("--out", required=True, help="output directory")
        if samples:
            p.add_argument("--samples", required=True, help="sample archive directory")

    p = sub.add_parser("ingest", help="parse trip CSV into a sample archive")
    common(p)
    p.add_argument("--trips", required=True, help="trip record CSV")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="draw synthetic samples from the config generator")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-sets", help="bootstrap box and soc sets from samples")
    common(p, samples=True)
    p.set_defaults(func=cmd_build_sets)

    p = sub.add_parser("solve-once", help="solve one dispatch problem")
    common(p)
    p.add_argument("--samples", help="sample archive directory")
    p.add_argument("--set", help="serialized uncertainty set file (overrides --samples)")
    p.set_defaults(func=cmd_solve_once)

    p = sub.add_parser("simulate", help="receding-horizon simulation")
    common(p, samples=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("cross-validate", help="train/test policy comparison")
    common(p, samples=True)
    p.set_defaults(func=cmd_cross_validate)

    p = sub.add_parser("sweep-epsilon", help="guarantee-level sweep")
    common(p, samples=True)
    p.set_defaults(func=cmd_sweep_epsilon)

    p = sub.add_parser("sweep-alpha", help="equity-exponent sweep")
    common(p)
    p.add_argument("--samples", help="sample archive directory")
    p.set_defaults(func=cmd_sweep_alpha)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
