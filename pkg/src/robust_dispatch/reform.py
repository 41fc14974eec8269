"""Tractable convex counterparts of the robust rebalancing problem.

The robust problem minimizes, over rebalancing decisions, the worst-case
total cost  sum_k [ j_d(X^k) + beta * j_e(X^k, L^k, r^k) ]  as the demand
vector ranges over an uncertainty set.  For polytopes the inner maximum is
dualized into multipliers lambda >= 0; for mean/covariance (second-order
cone) sets it is replaced by the set's closed-form support function.  Both
routes keep the nonlinear supply terms b_i^(-alpha) representable through
power-epigraph auxiliaries u_i >= b_i^(-alpha).

Polytope duals use the inequality form  A^T lambda >= c(X)  with
c_i(X) = beta * b_i^(-alpha) >= 0, which is exact for sets contained in
the nonnegative orthant (demand sets are, by construction).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    DispatchInstance,
    decision_blocks,
    equity_epigraphs,
    skeleton_constraints,
    stage_names,
)
from .program import Affine, ConvexProgram, LinearConstraint, NormTerm, VarBlock, affine
from .uncertainty import BoxSet, PolytopeSet, SocSet, UncertaintySet, box_to_polytope

KINDS = ("auto", "single", "per_stage", "coupled", "soc")


@dataclass(frozen=True)
class RobustProblemSpec:
    """Instance + demand set + reformulation kind tag.

    kind 'auto' picks per-stage duals for boxes and per-stage polytopes,
    the shared-multiplier dual for coupled polytopes, and the support
    function route for mean/covariance sets.
    """

    instance: DispatchInstance
    demand_set: UncertaintySet
    kind: str = "auto"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown reformulation kind {self.kind!r}")
        inst = self.instance
        dset = self.demand_set
        if isinstance(dset, (BoxSet, SocSet)):
            if dset.dim != inst.tau * inst.n:
                raise ValueError("set dimension must equal tau * n")
        elif isinstance(dset, PolytopeSet):
            if dset.n != inst.n or dset.tau != inst.tau:
                raise ValueError("polytope stage blocks must match the instance")
        else:
            raise TypeError(f"unsupported demand set {type(dset).__name__}")


def _stage_selector(k: int, n: int, tau: int) -> np.ndarray:
    sel = np.zeros((n, tau * n))
    sel[np.arange(n), k * n + np.arange(n)] = 1.0
    return sel


def _distance_terms(instance: DispatchInstance) -> dict[str, np.ndarray]:
    x_names, _ = stage_names(instance.tau)
    w_row = instance.W.ravel()[None, :]
    return {name: w_row for name in x_names}


def _dual_program(
    instance: DispatchInstance,
    stage_A: list[np.ndarray],
    lam_of_stage: list[str],
    lam_blocks: dict[str, np.ndarray],
    kind: str,
    demand_set: PolytopeSet,
) -> ConvexProgram:
    """Shared dual-side assembly.

    stage_A[k] is the matrix multiplying stage k's demand; lam_of_stage[k]
    names the multiplier block tied to stage k; lam_blocks maps each
    multiplier block to its objective coefficient (the polytope rhs).
    """
    n, tau, beta = instance.n, instance.tau, instance.beta
    blocks = decision_blocks(instance)
    blocks.append(VarBlock("u", (tau * n,)))
    for name, rhs in lam_blocks.items():
        blocks.append(VarBlock(name, (rhs.size,), nonneg=True))

    obj_terms = _distance_terms(instance)
    for name, rhs in lam_blocks.items():
        obj_terms[name] = np.asarray(rhs, dtype=float)[None, :]
    objective = Affine(terms=obj_terms, const=np.zeros(1))

    cons = skeleton_constraints(instance)
    for k in range(tau):
        A_k = np.asarray(stage_A[k], dtype=float)
        lam = lam_of_stage[k]
        cons.append(
            LinearConstraint(
                affine({"u": beta * _stage_selector(k, n, tau), lam: -A_k.T}, rows=n),
                "ineq",
                name=f"dual_link_stage{k + 1}",
            )
        )

    x_names, l_names = stage_names(tau)
    return ConvexProgram(
        blocks=tuple(blocks),
        objective=objective,
        constraints=tuple(cons),
        power_epigraphs=tuple(equity_epigraphs(instance, "u")),
        meta={
            "kind": kind,
            "n": n,
            "tau": tau,
            "alpha": instance.alpha,
            "beta": beta,
            "stage_x": x_names,
            "stage_l": l_names,
            "epi_block": "u",
            "lam_blocks": {k: np.asarray(v) for k, v in lam_blocks.items()},
            "lam_of_stage": list(lam_of_stage),
            "instance": instance,
            "demand_set": demand_set,
        },
    )


def dualize_single_polytope(
    instance: DispatchInstance, A: np.ndarray, b: np.ndarray
) -> ConvexProgram:
    """Single-stage dual: min j_d + b.lam s.t. A^T lam >= c(X), lam >= 0."""
    if instance.tau != 1:
        raise ValueError("single-polytope dual requires tau = 1")
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    dset = PolytopeSet(A=(A,), b=b)
    dset.feasible_point()  # emptiness probe
    return _dual_program(instance, [A], ["lam"], {"lam": b}, "single", dset)


def dualize_per_stage_polytopes(
    instance: DispatchInstance,
    stage_A: list[np.ndarray],
    stage_b: list[np.ndarray],
) -> ConvexProgram:
    """Stage-decoupled dual: one multiplier vector per stage set."""
    if len(stage_A) != instance.tau or len(stage_b) != instance.tau:
        raise ValueError("need one (A_k, b_k) pair per stage")
    stage_A = [np.asarray(a, dtype=float) for a in stage_A]
    stage_b = [np.asarray(v, dtype=float) for v in stage_b]
    dset = PolytopeSet(A=tuple(stage_A), b_stages=tuple(stage_b), per_stage=True)
    dset.feasible_point()
    lam_names = [f"lam{k + 1}" for k in range(instance.tau)]
    lam_blocks = {name: rhs for name, rhs in zip(lam_names, stage_b)}
    return _dual_program(instance, stage_A, lam_names, lam_blocks, "per_stage", dset)


def dualize_coupled_polytope(
    instance: DispatchInstance,
    stage_A: list[np.ndarray],
    b: np.ndarray,
) -> ConvexProgram:
    """Cross-stage dual: shared lam with A_k^T lam >= c(X^k) for every k."""
    if len(stage_A) != instance.tau:
        raise ValueError("need one coupling block per stage")
    stage_A = [np.asarray(a, dtype=float) for a in stage_A]
    b = np.asarray(b, dtype=float)
    dset = PolytopeSet(A=tuple(stage_A), b=b)
    dset.feasible_point()
    lam_names = ["lam"] * instance.tau
    return _dual_program(instance, stage_A, lam_names, {"lam": b}, "coupled", dset)


def reformulate_soc(instance: DispatchInstance, soc: SocSet) -> ConvexProgram:
    """Support-function route for mean/covariance sets.

    The inner maximum of sum_i r_i c_i(X) over the set is the support
    function evaluated at c(X); with the epigraph z >= b^(-alpha) and the
    degree-one homogeneity of the support function this becomes

        beta * ( center . z + gamma1 ||z||_2 + w_bound ||C z||_2 ).
    """
    n, tau, beta = instance.n, instance.tau, instance.beta
    if soc.dim != tau * n:
        raise ValueError("set dimension must equal tau * n")
    blocks = decision_blocks(instance)
    blocks.append(VarBlock("z", (tau * n,)))

    obj_terms = _distance_terms(instance)
    obj_terms["z"] = beta * np.asarray(soc.center, dtype=float)[None, :]
    objective = Affine(terms=obj_terms, const=np.zeros(1))

    eye = np.eye(tau * n)
    norm_terms = (
        NormTerm(weight=beta * float(soc.gamma1), expr=affine({"z": eye}, rows=tau * n)),
        NormTerm(
            weight=beta * soc.w_bound,
            expr=affine({"z": np.asarray(soc.C, dtype=float)}, rows=tau * n),
        ),
    )

    x_names, l_names = stage_names(tau)
    return ConvexProgram(
        blocks=tuple(blocks),
        objective=objective,
        norm_terms=norm_terms,
        constraints=tuple(skeleton_constraints(instance)),
        power_epigraphs=tuple(equity_epigraphs(instance, "z")),
        meta={
            "kind": "soc",
            "n": n,
            "tau": tau,
            "alpha": instance.alpha,
            "beta": beta,
            "stage_x": x_names,
            "stage_l": l_names,
            "epi_block": "z",
            "instance": instance,
            "demand_set": soc,
        },
    )


def robust_counterpart(spec: RobustProblemSpec) -> ConvexProgram:
    """Route a robust problem spec to the matching counterpart builder."""
    inst = spec.instance
    dset = spec.demand_set
    kind = spec.kind

    if isinstance(dset, SocSet):
        if kind not in ("auto", "soc"):
            raise ValueError(f"kind {kind!r} does not apply to a mean/covariance set")
        return reformulate_soc(inst, dset)

    if isinstance(dset, BoxSet):
        dset = box_to_polytope(dset, stages=inst.tau)
    elif kind == "soc":
        raise ValueError("kind 'soc' requires a mean/covariance set")

    if kind == "auto":
        kind = "per_stage" if dset.per_stage else ("single" if inst.tau == 1 else "coupled")

    if kind == "single":
        if inst.tau != 1:
            raise ValueError("kind 'single' requires tau = 1")
        A_full, b_full = dset.stacked()
        return dualize_single_polytope(inst, A_full, b_full)
    if kind == "per_stage":
        if not dset.per_stage:
            raise ValueError("cannot split a coupled polytope into stage sets")
        return dualize_per_stage_polytopes(inst, list(dset.A), list(dset.b_stages))
    if kind == "coupled":
        coupled = dset.as_coupled()
        return dualize_coupled_polytope(inst, list(coupled.A), coupled.b)
    raise ValueError(f"unknown reformulation kind {kind!r}")
