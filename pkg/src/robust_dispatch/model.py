"""Fleet rebalancing model: instance data, cost terms, nominal program.

An instance fixes the region graph (distance matrix W, customer transition
matrices P), the initial fleet split L1, per-stage movement budgets m, and
the cost weights alpha (equity curvature) and beta (equity weight).  The
decision at stage k is a nonnegative rebalancing matrix X^k (X_ij vehicles
sent from region i to region j); the post-rebalancing supply is

    b_i = sum_j X_ji - sum_j X_ij + L_i,

the travel cost is j_d = sum_ij X_ij W_ij, and the equity cost against a
demand vector r is j_e = sum_i r_i / b_i^alpha.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import textio
from .program import (
    Affine,
    ConvexProgram,
    LinearConstraint,
    PowerEpigraph,
    VarBlock,
    affine,
)

_ROW_SUM_TOL = 1e-9


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DispatchInstance:
    """Problem data shared by the nominal and robust programs.

    `m` may be given as a single scalar (same budget every stage) or as a
    length-tau sequence.  `P` holds the tau-1 inter-stage transition
    matrices (row-stochastic); pass an empty sequence when tau = 1.
    """

    n: int
    tau: int
    W: np.ndarray
    P: tuple[np.ndarray, ...]
    L1: np.ndarray
    m: tuple[float, ...]
    alpha: float = 0.1
    beta: float = 10.0

    def __post_init__(self):
        if self.n < 1 or self.tau < 1:
            raise ValueError("need n >= 1 regions and tau >= 1 stages")
        W = _frozen(self.W)
        if W.shape != (self.n, self.n):
            raise ValueError(f"W must be {self.n}x{self.n}")
        if np.any(W < 0) or not np.all(np.isfinite(W)):
            raise ValueError("W must be finite and nonnegative")
        if np.any(np.diag(W) != 0.0):
            raise ValueError("W must have an exactly zero diagonal")
        object.__setattr__(self, "W", W)

        P = tuple(_frozen(p) for p in self.P)
        if len(P) != self.tau - 1:
            raise ValueError(f"need {self.tau - 1} transition matrices, got {len(P)}")
        for k, p in enumerate(P):
            if p.shape != (self.n, self.n):
                raise ValueError(f"P[{k}] must be {self.n}x{self.n}")
            if np.any(p < 0) or np.any(p > 1):
                raise ValueError(f"P[{k}] entries must lie in [0, 1]")
            if np.max(np.abs(p.sum(axis=1) - 1.0)) > _ROW_SUM_TOL:
                raise ValueError(f"P[{k}] rows must sum to 1")
        object.__setattr__(self, "P", P)

        L1 = _frozen(self.L1)
        if L1.shape != (self.n,):
            raise ValueError(f"L1 must have length {self.n}")
        if np.any(L1 < 0) or not np.all(np.isfinite(L1)):
            raise ValueError("L1 must be finite and nonnegative")
        if L1.sum() < self.n - 1e-9:
            raise ValueError("total fleet must be at least one vehicle per region")
        object.__setattr__(self, "L1", L1)

        m = self.m
        if np.isscalar(m):
            m = (float(m),) * self.tau
        else:
            m = tuple(float(v) for v in m)
        if len(m) != self.tau:
            raise ValueError(f"need {self.tau} movement budgets, got {len(m)}")
        if any(not np.isfinite(v) or v <= 0 for v in m):
            raise ValueError("movement budgets must be positive")
        object.__setattr__(self, "m", m)

        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError("alpha must be positive")
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise ValueError("beta must be nonnegative")

    @property
    def fleet_size(self) -> float:
        return float(self.L1.sum())

    def masks(self) -> tuple[np.ndarray, ...]:
        """Per-stage reachability masks (True where X may be nonzero)."""
        return tuple(reachability_mask(self.W, mk) for mk in self.m)


@dataclass(frozen=True)
class NominalDemand:
    """Fixed demand r[k, i] for stage k (0-based) and region i."""

    r: np.ndarray

    def __post_init__(self):
        r = _frozen(np.atleast_2d(self.r))
        if r.ndim != 2:
            raise ValueError("r must be a (tau, n) array")
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise ValueError("demand must be finite and nonnegative")
        object.__setattr__(self, "r", r)

    @property
    def tau(self) -> int:
        return self.r.shape[0]

    @property
    def n(self) -> int:
        return self.r.shape[1]

    def flat(self) -> np.ndarray:
        return self.r.ravel()


@dataclass(frozen=True)
class DecisionVars:
    """A candidate decision: X[k] is stage k's rebalancing matrix and L[k]
    the fleet split entering stage k (L[0] must equal the instance L1)."""

    X: tuple[np.ndarray, ...]
    L: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "X", tuple(_frozen(x) for x in self.X))
        object.__setattr__(self, "L", tuple(_frozen(v) for v in self.L))
        if len(self.X) != len(self.L):
            raise ValueError("need one fleet split per stage")

    def violations(self, instance: DispatchInstance, tol: float = 1e-7) -> list[str]:
        """Constraint violations beyond `tol`; empty list means feasible."""
        out = []
        if len(self.X) != instance.tau:
            return [f"expected {instance.tau} stages, got {len(self.X)}"]
        if np.max(np.abs(self.L[0] - instance.L1)) > tol:
            out.append("stage-1 fleet split differs from instance L1")
        masks = instance.masks()
        for k, (x, lk) in enumerate(zip(self.X, self.L)):
            if x.shape != (instance.n, instance.n):
                out.append(f"stage {k + 1}: X has wrong shape")
                continue
            if np.min(x, initial=0.0) < -tol:
                out.append(f"stage {k + 1}: negative rebalancing entry")
            masked = np.abs(x[~masks[k]])
            if masked.size and masked.max() > tol:
                out.append(f"stage {k + 1}: flow on an out-of-reach pair")
            if np.max(np.abs(np.diag(x))) > tol:
                out.append(f"stage {k + 1}: nonzero self-loop entry")
            b = supply(x, lk)
            if b.min() < 1.0 - tol:
                out.append(f"stage {k + 1}: supply below 1 in some region")
            if k + 1 < instance.tau:
                nxt = propagate_fleet(x, lk, instance.P[k])
                if np.max(np.abs(nxt - self.L[k + 1])) > tol:
                    out.append(f"stage {k + 1}: fleet dynamics violated")
        return out


# ---------------------------------------------------------------------------
# cost terms and dynamics


def j_d(X: np.ndarray, W: np.ndarray) -> float:
    """Rebalancing travel cost sum_ij X_ij W_ij."""
    return float(np.sum(np.asarray(X) * np.asarray(W)))


def supply(X: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Post-rebalancing supply b = inflow - outflow + L (conserves sum(L))."""
    X = np.asarray(X, dtype=float)
    L = np.asarray(L, dtype=float)
    b = X.sum(axis=0) - X.sum(axis=1) + L
    scale = max(1.0, abs(float(L.sum())))
    if abs(b.sum() - L.sum()) > 1e-9 * scale:
        raise AssertionError("supply must conserve the fleet total")
    return b


def j_e(X: np.ndarray, L: np.ndarray, r: np.ndarray, alpha: float) -> float:
    """Equity cost sum_i r_i / b_i^alpha; requires positive supply."""
    b = supply(X, L)
    if np.any(b <= 0):
        raise ValueError("supply must be positive for the equity cost")
    return float(np.sum(np.asarray(r, dtype=float) / b**alpha))


def mismatch(X: np.ndarray, L: np.ndarray, r: np.ndarray) -> float:
    """Fairness gap sum_i |r_i / b_i - sum_j r_j / sum_j b_j|."""
    b = supply(X, L)
    if np.any(b <= 0):
        raise ValueError("supply must be positive for the mismatch measure")
    r = np.asarray(r, dtype=float)
    return float(np.sum(np.abs(r / b - r.sum() / b.sum())))


def propagate_fleet(X: np.ndarray, L: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Next-stage fleet split: customers move vehicles as P^T b."""
    return np.asarray(P, dtype=float).T @ supply(X, L)


def reachability_mask(W: np.ndarray, m: float) -> np.ndarray:
    """True where a rebalancing trip fits the budget (W_ij <= m)."""
    return np.asarray(W) <= m


def stage_chain(
    instance: DispatchInstance, X: tuple[np.ndarray, ...]
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Supplies and fleet splits ([b^1..b^tau], [L^1..L^tau]) implied by X."""
    if len(X) != instance.tau:
        raise ValueError(f"expected {instance.tau} stage matrices")
    L = instance.L1
    supplies, splits = [], [L]
    for k in range(instance.tau):
        b = supply(X[k], L)
        supplies.append(b)
        if k + 1 < instance.tau:
            L = instance.P[k].T @ b
            splits.append(L)
    return supplies, splits


# ---------------------------------------------------------------------------
# program skeleton shared by the nominal and robust builders


def flow_matrix(n: int) -> np.ndarray:
    """G with supply b = G @ vec(X) + L (row-major vec; diagonal cancels)."""
    G = np.zeros((n, n * n))
    for i in range(n):
        for j in range(n):
            G[i, j * n + i] += 1.0  # inflow j -> i
            G[i, i * n + j] -= 1.0  # outflow i -> j
    return G


def stage_names(tau: int) -> tuple[list[str], list[str]]:
    """Variable block names ([X1..Xtau], [L2..Ltau])."""
    return (
        [f"X{k + 1}" for k in range(tau)],
        [f"L{k + 2}" for k in range(tau - 1)],
    )


def decision_blocks(instance: DispatchInstance) -> list[VarBlock]:
    n = instance.n
    x_names, l_names = stage_names(instance.tau)
    blocks = [VarBlock(name, (n, n), nonneg=True) for name in x_names]
    blocks += [VarBlock(name, (n,)) for name in l_names]
    return blocks


def supply_affines(instance: DispatchInstance) -> list[Affine]:
    """b^k as an affine map of the decision blocks, one entry per stage."""
    n = instance.n
    G = flow_matrix(n)
    x_names, l_names = stage_names(instance.tau)
    out = [Affine(terms={x_names[0]: G}, const=instance.L1)]
    eye = np.eye(n)
    for k in range(1, instance.tau):
        out.append(affine({x_names[k]: G, l_names[k - 1]: eye}, rows=n))
    return out


def skeleton_constraints(instance: DispatchInstance) -> list[LinearConstraint]:
    """Fleet dynamics, supply >= 1, and masked-entry pinning for all stages."""
    n = instance.n
    x_names, l_names = stage_names(instance.tau)
    supplies = supply_affines(instance)
    cons: list[LinearConstraint] = []
    for k, b_aff in enumerate(supplies):
        cons.append(
            LinearConstraint(
                Affine(
                    terms={name: -mat for name, mat in b_aff.terms.items()},
                    const=1.0 - b_aff.const,
                ),
                "ineq",
                name=f"supply_stage{k + 1}",
            )
        )
        if k + 1 < instance.tau:
            PT = instance.P[k].T
            terms = {name: PT @ mat for name, mat in b_aff.terms.items()}
            l_next = l_names[k]
            terms[l_next] = terms.get(l_next, np.zeros((n, n))) - np.eye(n)
            cons.append(
                LinearConstraint(
                    Affine(terms=terms, const=PT @ b_aff.const),
                    "eq",
                    name=f"dynamics_stage{k + 1}",
                )
            )
    for k, mask in enumerate(instance.masks()):
        # self-loops carry no cost and cancel in the supply; pin them too
        pinned = ~mask | np.eye(n, dtype=bool)
        blocked = np.argwhere(pinned.ravel()).ravel()
        if blocked.size:
            sel = np.zeros((blocked.size, n * n))
            sel[np.arange(blocked.size), blocked] = 1.0
            cons.append(
                LinearConstraint(
                    affine({x_names[k]: sel}, rows=blocked.size),
                    "eq",
                    name=f"mask_stage{k + 1}",
                )
            )
    return cons


def equity_epigraphs(instance: DispatchInstance, epi_block: str) -> list[PowerEpigraph]:
    """Per-stage rows epi[k*n + i] >= (b^k_i)^(-alpha) over block `epi_block`."""
    n, tau = instance.n, instance.tau
    out = []
    for k, b_aff in enumerate(supply_affines(instance)):
        sel = np.zeros((n, tau * n))
        sel[np.arange(n), k * n + np.arange(n)] = 1.0
        out.append(
            PowerEpigraph(
                epi=affine({epi_block: sel}, rows=n),
                base=b_aff,
                alpha=instance.alpha,
                name=f"equity_stage{k + 1}",
            )
        )
    return out


def build_nominal(
    instance: DispatchInstance,
    demand: NominalDemand,
    distance_weight: float = 1.0,
) -> ConvexProgram:
    """Convex program for the fixed-demand problem.

    Minimizes sum_k (distance_weight * j_d(X^k) + beta * j_e(X^k, L^k, r^k))
    over the rebalancing matrices and downstream fleet splits, subject to
    fleet dynamics, supply >= 1, the reachability mask, and X >= 0.  The
    equity terms enter through epigraph rows u_{k,i} >= (b^k_i)^(-alpha).
    """
    if demand.tau != instance.tau or demand.n != instance.n:
        raise ValueError("demand shape does not match the instance")
    n, tau = instance.n, instance.tau
    x_names, l_names = stage_names(tau)
    blocks = decision_blocks(instance) + [VarBlock("u", (tau * n,))]
    w_row = instance.W.ravel()[None, :] * distance_weight
    obj_terms = {name: w_row for name in x_names}
    obj_terms["u"] = instance.beta * demand.flat()[None, :]
    objective = Affine(terms=obj_terms, const=np.zeros(1))
    return ConvexProgram(
        blocks=tuple(blocks),
        objective=objective,
        constraints=tuple(skeleton_constraints(instance)),
        power_epigraphs=tuple(equity_epigraphs(instance, "u")),
        meta={
            "kind": "nominal",
            "n": n,
            "tau": tau,
            "alpha": instance.alpha,
            "beta": instance.beta,
            "stage_x": x_names,
            "stage_l": l_names,
            "epi_block": "u",
            "instance": instance,
            "demand": demand,
            "distance_weight": distance_weight,
        },
    )


# ---------------------------------------------------------------------------
# text round-trip


def write_instance(out: io.TextIOBase, instance: DispatchInstance) -> None:
    textio.write_str(out, "format", "dispatch-instance-v1")
    textio.write_int(out, "n", instance.n)
    textio.write_int(out, "tau", instance.tau)
    textio.write_scalar(out, "alpha", instance.alpha)
    textio.write_scalar(out, "beta", instance.beta)
    textio.write_vector(out, "m", np.array(instance.m))
    textio.write_matrix(out, "W", instance.W)
    textio.write_vector(out, "L1", instance.L1)
    textio.write_int(out, "transitions", len(instance.P))
    for k, p in enumerate(instance.P):
        textio.write_matrix(out, f"P{k + 1}", p)


def read_instance(source) -> DispatchInstance:
    reader = textio.SectionReader(source)
    fmt = reader.read_str("format")
    if fmt != "dispatch-instance-v1":
        raise ValueError(f"unexpected format {fmt!r}")
    n = reader.read_int("n")
    tau = reader.read_int("tau")
    alpha = reader.read_scalar("alpha")
    beta = reader.read_scalar("beta")
    m = tuple(reader.read_vector("m"))
    W = reader.read_matrix("W")
    L1 = reader.read_vector("L1")
    count = reader.read_int("transitions")
    P = tuple(reader.read_matrix(f"P{k + 1}") for k in range(count))
    return DispatchInstance(n=n, tau=tau, W=W, P=P, L1=L1, m=m, alpha=alpha, beta=beta)


def instance_to_text(instance: DispatchInstance) -> str:
    return textio.dumps(lambda out: write_instance(out, instance))


def write_demand(out: io.TextIOBase, demand: NominalDemand) -> None:
    textio.write_str(out, "format", "nominal-demand-v1")
    textio.write_matrix(out, "r", demand.r)


def read_demand(source) -> NominalDemand:
    reader = textio.SectionReader(source)
    fmt = reader.read_str("format")
    if fmt != "nominal-demand-v1":
        raise ValueError(f"unexpected format {fmt!r}")
    return NominalDemand(r=reader.read_matrix("r"))


def demand_to_text(demand: NominalDemand) -> str:
    return textio.dumps(lambda out: write_demand(out, demand))
