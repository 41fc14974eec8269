"""Receding-horizon simulation, cross-validation, guarantees, and sweeps.

A Policy pairs a decision rule (fixed mean demand, or robust against a
bootstrapped box / mean-covariance set) with solver and set-construction
knobs.  The harness evaluates policies on realized demand: a rolling
simulation that applies only each step's first-stage dispatch, a
train/test cross-validation that scores fixed plans on held-out samples,
empirical checks of the probabilistic guarantee, and the epsilon / alpha
parameter sweeps.  Everything is deterministic under fixed seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .ingest import SampleSet
from .model import (
    DispatchInstance,
    NominalDemand,
    j_d,
    j_e,
    mismatch,
    stage_chain,
    supply,
)
from .reform import RobustProblemSpec, robust_counterpart
from .solve import Solution, SolverOptions, solve
from .model import build_nominal
from .uncertainty import (
    BootstrapConfig,
    BoxSet,
    SocSet,
    UncertaintySet,
    bootstrap_box,
    bootstrap_soc,
)

POLICY_KINDS = ("nonrobust", "robust_box", "robust_soc")


@dataclass(frozen=True)
class Policy:
    """A decision rule: plan against the mean, or against a demand set."""

    kind: str
    solver: SolverOptions = SolverOptions()
    bootstrap: BootstrapConfig | None = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind != "nonrobust" and self.bootstrap is None:
            raise ValueError(f"policy {self.kind!r} needs a bootstrap config")


@dataclass(frozen=True)
class RunMetrics:
    """Per-step (or per-sample) evaluation of one policy."""

    mismatch: tuple[float, ...]
    idle_distance: tuple[float, ...]
    weighted_cost: tuple[float, ...]
    guarantee_fraction: float
    mean_mismatch: float
    mean_idle_distance: float
    mean_cost: float
    hist_edges: tuple[float, ...]
    hist_counts: tuple[int, ...]

    def __post_init__(self):
        for name in ("mismatch", "idle_distance", "weighted_cost"):
            vals = getattr(self, name)
            if any(v < 0 or not np.isfinite(v) for v in vals):
                raise ValueError(f"{name} entries must be finite and nonnegative")
        f = self.guarantee_fraction
        if not (np.isnan(f) or 0.0 <= f <= 1.0):
            raise ValueError("guarantee fraction must lie in [0, 1]")

    @classmethod
    def from_steps(
        cls,
        mismatches,
        idle,
        cost,
        guarantee_fraction: float,
        hist_edges=None,
        bins: int = 10,
    ) -> "RunMetrics":
        cost = [float(v) for v in cost]
        if hist_edges is None:
            top = max(cost, default=1.0) * (1.0 + 1e-9) or 1.0
            hist_edges = np.linspace(0.0, top, bins + 1)
        counts, edges = np.histogram(cost, bins=np.asarray(hist_edges, dtype=float))
        return cls(
            mismatch=tuple(float(v) for v in mismatches),
            idle_distance=tuple(float(v) for v in idle),
            weighted_cost=tuple(cost),
            guarantee_fraction=float(guarantee_fraction),
            mean_mismatch=float(np.mean(mismatches)) if len(mismatches) else 0.0,
            mean_idle_distance=float(np.mean(idle)) if len(idle) else 0.0,
            mean_cost=float(np.mean(cost)) if len(cost) else 0.0,
            hist_edges=tuple(float(e) for e in edges),
            hist_counts=tuple(int(c) for c in counts),
        )


# ---------------------------------------------------------------------------
# policy plumbing


def build_demand_model(
    policy: Policy, instance: DispatchInstance, train: SampleSet
) -> NominalDemand | UncertaintySet:
    """Train-split artifact the policy plans against."""
    if train.dim != instance.tau * instance.n:
        raise ValueError("sample dimension must equal tau * n")
    if policy.kind == "nonrobust":
        mean = train.matrix().mean(axis=0)
        return NominalDemand(r=mean.reshape(instance.tau, instance.n))
    if policy.kind == "robust_box":
        return bootstrap_box(train, policy.bootstrap)
    return bootstrap_soc(train, policy.bootstrap)


def policy_program(policy: Policy, instance: DispatchInstance, demand_model):
    if policy.kind == "nonrobust":
        if not isinstance(demand_model, NominalDemand):
            raise TypeError("nonrobust policies plan against a NominalDemand")
        return build_nominal(instance, demand_model)
    expected = BoxSet if policy.kind == "robust_box" else SocSet
    if not isinstance(demand_model, expected):
        raise TypeError(f"policy {policy.kind!r} expects a {expected.__name__}")
    return robust_counterpart(RobustProblemSpec(instance, demand_model))


def solve_policy(
    policy: Policy, instance: DispatchInstance, demand_model
) -> Solution:
    sol = solve(policy_program(policy, instance, demand_model), policy.solver)
    if sol.status != "optimal":
        raise RuntimeError(f"policy solve failed with status {sol.status!r}")
    return sol


def plan_cost(instance: DispatchInstance, X, r_flat: np.ndarray) -> float:
    """Full-horizon cost of a fixed plan X against one demand vector."""
    supplies, splits = stage_chain(instance, tuple(X))
    r = np.asarray(r_flat, dtype=float).reshape(instance.tau, instance.n)
    total = 0.0
    for k in range(instance.tau):
        total += j_d(X[k], instance.W)
        total += instance.beta * j_e(X[k], splits[k], r[k], instance.alpha)
    return total


def plan_mismatch(instance: DispatchInstance, X, r_flat: np.ndarray) -> float:
    """Summed demand-supply ratio mismatch of a fixed plan over its stages."""
    _, splits = stage_chain(instance, tuple(X))
    r = np.asarray(r_flat, dtype=float).reshape(instance.tau, instance.n)
    return sum(mismatch(X[k], splits[k], r[k]) for k in range(instance.tau))


# ---------------------------------------------------------------------------
# receding horizon


def run_receding_horizon(
    instance: DispatchInstance,
    policy: Policy,
    demand_models,
    realized: np.ndarray,
    transitions=None,
) -> RunMetrics:
    """Simulate the rolling loop: plan, apply stage one, roll forward.

    demand_models[t] is what the policy plans against at step t (a
    NominalDemand for nonrobust, an uncertainty set otherwise); realized
    is the (T, n) stream of demand that actually arrives.  The fleet
    rolls forward through the step transition matrix applied to the
    post-dispatch supply; the plan's own later stages are discarded.
    """
    realized = np.atleast_2d(np.asarray(realized, dtype=float))
    T = realized.shape[0]
    if realized.shape[1] != instance.n:
        raise ValueError("realized stream must have one column per region")
    if len(demand_models) < T:
        raise ValueError("need one demand model per simulated step")
    if T < instance.tau:
        raise ValueError("realized stream shorter than the planning horizon")
    if transitions is None:
        default = instance.P[0] if instance.P else np.eye(instance.n)
        transitions = [default] * T
    fleet0 = instance.fleet_size

    L = instance.L1
    mism, idle, cost = [], [], []
    hits = total_windows = 0
    for t in range(T):
        inst_t = replace(instance, L1=L)
        try:
            sol = solve_policy(policy, inst_t, demand_models[t])
        except RuntimeError as exc:
            raise RuntimeError(f"solver failure at step {t}: {exc}") from exc
        X1 = sol.X[0]
        r_t = realized[t]
        mism.append(mismatch(X1, L, r_t))
        idle.append(j_d(X1, instance.W))
        cost.append(
            j_d(X1, instance.W)
            + instance.beta * j_e(X1, L, r_t, instance.alpha)
        )
        if t + instance.tau <= T:
            window = realized[t : t + instance.tau].ravel()
            total_windows += 1
            if plan_cost(inst_t, sol.X, window) <= sol.objective + 1e-9:
                hits += 1
        b = supply(X1, L)
        L = np.asarray(transitions[t], dtype=float).T @ b
        if abs(L.sum() - fleet0) > 1e-9 * max(1.0, fleet0):
            raise AssertionError("fleet total must be conserved across steps")
    fraction = hits / total_windows if total_windows else float("nan")
    return RunMetrics.from_steps(mism, idle, cost, fraction)


# ---------------------------------------------------------------------------
# cross-validation and guarantees


def split_by_date(samples: SampleSet, split_ratio: float) -> tuple[SampleSet, SampleSet]:
    """Date-based train/test split; each date is one i.i.d. sample."""
    if not (0.0 < split_ratio < 1.0):
        raise ValueError("split_ratio must lie strictly between 0 and 1")
    if len(samples.samples) < 10:
        raise ValueError("need at least 10 samples to cross-validate")
    dates = sorted({s.date for s in samples.samples})
    n_train = int(split_ratio * len(dates))
    if n_train < 1 or n_train >= len(dates):
        raise ValueError("degenerate split: both sides need at least one date")
    train_dates = set(dates[:n_train])
    train = [s for s in samples.samples if s.date in train_dates]
    test = [s for s in samples.samples if s.date not in train_dates]
    return (
        SampleSet(t=samples.t, label=samples.label, samples=train),
        SampleSet(t=samples.t, label=samples.label, samples=test),
    )


def score_plan(
    instance: DispatchInstance, sol: Solution, test: SampleSet
) -> RunMetrics:
    """Per-test-sample metrics of a fixed plan, with the guarantee check
    against the plan's own optimum bound."""
    M = sol.objective
    mism, idle, cost = [], [], []
    base_idle = sum(j_d(xk, instance.W) for xk in sol.X)
    hits = 0
    rows = test.matrix()
    for r_flat in rows:
        c = plan_cost(instance, sol.X, r_flat)
        cost.append(c)
        mism.append(plan_mismatch(instance, sol.X, r_flat))
        idle.append(base_idle)
        if c <= M + 1e-9:
            hits += 1
    fraction = hits / len(rows) if len(rows) else float("nan")
    return RunMetrics.from_steps(mism, idle, cost, fraction)


def cross_validate(
    instance: DispatchInstance,
    samples: SampleSet,
    split_ratio: float,
    policies,
) -> tuple[RunMetrics, ...]:
    """Build each policy on the train dates, score all on the same test."""
    train, test = split_by_date(samples, split_ratio)
    out = []
    for policy in policies:
        model = build_demand_model(policy, instance, train)
        sol = solve_policy(policy, instance, model)
        out.append(score_plan(instance, sol, test))
    return tuple(out)


def empirical_guarantee(M: float, sol: Solution, samples) -> float:
    """Fraction of samples whose realized plan cost stays within M."""
    instance: DispatchInstance = sol.program.meta["instance"]
    rows = samples.matrix() if isinstance(samples, SampleSet) else np.atleast_2d(samples)
    hits = sum(1 for r in rows if plan_cost(instance, sol.X, r) <= M + 1e-9)
    return hits / len(rows)


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class EpsilonRow:
    policy: str
    epsilon: float
    optimum: float
    mean_test_cost: float
    guarantee_fraction: float


def sweep_epsilon(
    instance: DispatchInstance,
    samples: SampleSet,
    policy_kind: str,
    epsilons,
    split_ratio: float = 0.7,
    bootstrap: BootstrapConfig | None = None,
    solver: SolverOptions = SolverOptions(),
) -> list[EpsilonRow]:
    """Robust optimum and mean held-out cost per epsilon, plus a
    mean-demand baseline row (epsilon recorded as nan)."""
    if policy_kind not in ("robust_box", "robust_soc"):
        raise ValueError("sweep_epsilon needs a robust policy kind")
    if bootstrap is None:
        raise ValueError("sweep_epsilon needs a bootstrap config template")
    train, test = split_by_date(samples, split_ratio)
    rows: list[EpsilonRow] = []

    base_policy = Policy(kind="nonrobust", solver=solver)
    base_model = build_demand_model(base_policy, instance, train)
    base_sol = solve_policy(base_policy, instance, base_model)
    base_metrics = score_plan(instance, base_sol, test)
    rows.append(
        EpsilonRow(
            policy="nonrobust",
            epsilon=float("nan"),
            optimum=base_sol.objective,
            mean_test_cost=base_metrics.mean_cost,
            guarantee_fraction=base_metrics.guarantee_fraction,
        )
    )
    for eps in epsilons:
        policy = Policy(
            kind=policy_kind,
            solver=solver,
            bootstrap=replace(bootstrap, epsilon=float(eps)),
        )
        model = build_demand_model(policy, instance, train)
        sol = solve_policy(policy, instance, model)
        metrics = score_plan(instance, sol, test)
        rows.append(
            EpsilonRow(
                policy=policy_kind,
                epsilon=float(eps),
                optimum=sol.objective,
                mean_test_cost=metrics.mean_cost,
                guarantee_fraction=metrics.guarantee_fraction,
            )
        )
    return rows


@dataclass(frozen=True)
class AlphaRow:
    alpha: float
    optimal_mismatch: float


def sweep_alpha(
    instance: DispatchInstance,
    demand: NominalDemand,
    alphas,
    solver: SolverOptions = SolverOptions(),
) -> list[AlphaRow]:
    """Minimize the equity cost alone per alpha and report the mismatch
    of each optimum.  Requires every demand entry >= 1."""
    if np.any(demand.r < 1.0):
        raise ValueError("sweep_alpha requires demand entries >= 1")
    rows = []
    for a in alphas:
        inst_a = replace(instance, alpha=float(a))
        prog = build_nominal(inst_a, demand, distance_weight=0.0)
        sol = solve(prog, solver)
        if sol.status != "optimal":
            raise RuntimeError(f"alpha sweep solve failed at alpha={a}")
        rows.append(
            AlphaRow(
                alpha=float(a),
                optimal_mismatch=plan_mismatch(inst_a, sol.X, demand.flat()),
            )
        )
    return rows
