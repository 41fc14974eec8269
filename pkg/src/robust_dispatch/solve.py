"""Conic solving, verification, rounding, and flow normalization.

Programs are lowered to the standard conic form min q.w s.t. A w + s = b,
s in K, over zero / nonnegative / second-order / three-dimensional power
cones, and handed to an embedded primal-dual interior-point engine.  The
lowering is deterministic; the engine runs single-threaded so repeated
solves print identical digits.

Each power-epigraph row u >= b^(-alpha) becomes the cone relation
(u, b, 1) in Pow3(1/(1+alpha)); each norm term enters through a scalar
epigraph bound by a second-order cone.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import clarabel
import numpy as np
import scipy.sparse as sp

from . import textio
from .model import DispatchInstance, j_d, stage_chain, supply
from .program import (
    Affine,
    ConvexProgram,
    LinearConstraint,
    check_feasibility,
    affine,
)
from .uncertainty import BoxSet, PolytopeSet, SocSet, UncertaintySet

_STATUS_MAP = {
    "Solved": "optimal",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "DualInfeasible": "infeasible",
    "AlmostDualInfeasible": "infeasible",
    "AlmostSolved": "max_iter",
    "MaxIterations": "max_iter",
    "MaxTime": "max_iter",
    "InsufficientProgress": "max_iter",
    "NumericalError": "max_iter",
    "Unsolved": "max_iter",
}


@dataclass(frozen=True)
class SolverOptions:
    """Engine knobs.

    tol is the KKT residual target (feasibility and relative gap).  The
    embedded engine follows its own central path and has no randomized
    pivoting, so barrier_init, barrier_reduction, and seed are accepted
    for interface stability but do not alter the deterministic result.
    """

    tol: float = 1e-7
    max_iter: int = 200
    barrier_init: float | None = None
    barrier_reduction: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not (self.tol > 0):
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        for name in ("barrier_init", "barrier_reduction"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive when given")


@dataclass(frozen=True)
class ResidualReport:
    """Solver-side accuracy summary for a returned point."""

    max_eq: float = math.nan
    max_ineq: float = math.nan
    max_nonneg: float = math.nan
    max_cone: float = math.nan
    rel_gap: float = math.nan
    complementarity: float = math.nan

    @property
    def max_primal(self) -> float:
        return max(self.max_eq, self.max_ineq, self.max_nonneg, self.max_cone)


@dataclass(frozen=True)
class Solution:
    """Solver output: per-stage decisions, multipliers, and diagnostics."""

    status: str
    objective: float
    X: tuple[np.ndarray, ...]
    L: tuple[np.ndarray, ...]
    duals: dict[str, np.ndarray]
    values: dict[str, np.ndarray]
    residuals: ResidualReport
    iterations: int = 0
    note: str = ""
    degradation: float | None = None
    program: ConvexProgram | None = None
    constraint_duals: dict[str, np.ndarray] = field(default_factory=dict)
    cone_duals: dict[str, np.ndarray] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# lowering


@dataclass
class _Lowered:
    A: sp.csc_matrix
    b: np.ndarray
    q: np.ndarray
    cones: list
    var_slices: dict[str, tuple[slice, tuple[int, ...]]]
    eq_rows: list[tuple[str, slice]]
    ineq_rows: list[tuple[str, slice]]
    nonneg_rows: list[tuple[str, slice]]
    soc_rows: list[tuple[str, slice]]
    pow_rows: list[tuple[str, slice]]
    n_vars: int


def _lower(program: ConvexProgram) -> _Lowered:
    var_slices: dict[str, tuple[slice, tuple[int, ...]]] = {}
    offset = 0
    for blk in program.blocks:
        var_slices[blk.name] = (slice(offset, offset + blk.size), blk.shape)
        offset += blk.size
    norm_terms = [nt for nt in program.norm_terms if nt.weight > 0]
    t_offsets = []
    for _ in norm_terms:
        t_offsets.append(offset)
        offset += 1
    n_vars = offset

    q = np.zeros(n_vars)
    for name, m in program.objective.terms.items():
        q[var_slices[name][0]] += m[0]
    for t_off, nt in zip(t_offsets, norm_terms):
        q[t_off] = nt.weight

    def scatter(rows_mat: np.ndarray, aff: Affine) -> None:
        for name, m in aff.terms.items():
            rows_mat[:, var_slices[name][0]] -= m

    A_parts: list[np.ndarray] = []
    b_parts: list[np.ndarray] = []
    cones: list = []
    eq_rows, ineq_rows, nonneg_rows, soc_rows, pow_rows = [], [], [], [], []
    row = 0

    def emit(mat: np.ndarray, rhs: np.ndarray) -> slice:
        nonlocal row
        A_parts.append(mat)
        b_parts.append(rhs)
        sl = slice(row, row + mat.shape[0])
        row += mat.shape[0]
        return sl

    # zero cone: equality constraints (expr == 0  ->  s = -expr = 0)
    n_eq = 0
    for c in program.constraints:
        if c.sense != "eq":
            continue
        mat = np.zeros((c.expr.rows, n_vars))
        scatter(mat, c.expr)
        eq_rows.append((c.name, emit(mat, c.expr.const.copy())))
        n_eq += c.expr.rows
    if n_eq:
        cones.append(clarabel.ZeroConeT(n_eq))

    # nonnegative cone: inequality constraints (s = -expr >= 0) then
    # variable bounds
    n_nn = 0
    for c in program.constraints:
        if c.sense != "ineq":
            continue
        mat = np.zeros((c.expr.rows, n_vars))
        for name, m in c.expr.terms.items():
            mat[:, var_slices[name][0]] += m
        ineq_rows.append((c.name, emit(mat, -c.expr.const)))
        n_nn += c.expr.rows
    for blk in program.blocks:
        if not blk.nonneg:
            continue
        sl, _ = var_slices[blk.name]
        mat = np.zeros((blk.size, n_vars))
        mat[np.arange(blk.size), np.arange(sl.start, sl.stop)] = -1.0
        nonneg_rows.append((blk.name, emit(mat, np.zeros(blk.size))))
        n_nn += blk.size
    if n_nn:
        cones.append(clarabel.NonnegativeConeT(n_nn))

    # second-order cones: one (t, expr) group per positive-weight norm term
    for idx, (t_off, nt) in enumerate(zip(t_offsets, norm_terms)):
        rows = nt.expr.rows + 1
        mat = np.zeros((rows, n_vars))
        mat[0, t_off] = -1.0
        scatter(mat[1:], nt.expr)
        rhs = np.concatenate([[0.0], nt.expr.const])
        soc_rows.append((f"norm{idx}", emit(mat, rhs)))
        cones.append(clarabel.SecondOrderConeT(rows))

    # power cones: per epigraph row, (epi_i, base_i, 1) in Pow3(1/(1+alpha))
    for pe in program.power_epigraphs:
        a = 1.0 / (1.0 + pe.alpha)
        start = row
        for i in range(pe.epi.rows):
            mat = np.zeros((3, n_vars))
            for name, m in pe.epi.terms.items():
                mat[0, var_slices[name][0]] -= m[i]
            for name, m in pe.base.terms.items():
                mat[1, var_slices[name][0]] -= m[i]
            rhs = np.array([pe.epi.const[i], pe.base.const[i], 1.0])
            emit(mat, rhs)
            cones.append(clarabel.PowerConeT(a))
        pow_rows.append((pe.name, slice(start, row)))

    A = sp.csc_matrix(np.vstack(A_parts) if A_parts else np.zeros((0, n_vars)))
    b = np.concatenate(b_parts) if b_parts else np.zeros(0)
    return _Lowered(
        A=A,
        b=b,
        q=q,
        cones=cones,
        var_slices=var_slices,
        eq_rows=eq_rows,
        ineq_rows=ineq_rows,
        nonneg_rows=nonneg_rows,
        soc_rows=soc_rows,
        pow_rows=pow_rows,
        n_vars=n_vars,
    )


def _engine_settings(opts: SolverOptions) -> "clarabel.DefaultSettings":
    st = clarabel.DefaultSettings()
    st.verbose = False
    st.max_iter = opts.max_iter
    st.max_threads = 1  # deterministic reductions
    st.tol_feas = opts.tol
    st.tol_gap_rel = opts.tol
    st.tol_gap_abs = opts.tol
    return st


def solve(program: ConvexProgram, opts: SolverOptions = SolverOptions()) -> Solution:
    """Minimize the program's objective; deterministic for fixed options."""
    low = _lower(program)
    P = sp.csc_matrix((low.n_vars, low.n_vars))
    solver = clarabel.DefaultSolver(
        P, low.q, low.A, low.b, low.cones, _engine_settings(opts)
    )
    raw = solver.solve()
    status = _STATUS_MAP.get(str(raw.status), "max_iter")
    note = "" if status == "optimal" else f"engine status {raw.status}"

    if status == "infeasible":
        return Solution(
            status=status,
            objective=math.nan,
            X=(),
            L=(),
            duals={},
            values={},
            residuals=ResidualReport(),
            iterations=int(raw.iterations),
            note=note,
            program=program,
        )

    x = np.asarray(raw.x, dtype=float)
    z = np.asarray(raw.z, dtype=float)
    s = np.asarray(raw.s, dtype=float)
    values = {
        name: x[sl].reshape(shape) for name, (sl, shape) in low.var_slices.items()
    }
    objective = program.objective_value(values)

    feas = check_feasibility(program, values)
    obj_scale = max(1.0, abs(float(raw.obj_val)))
    rel_gap = abs(float(raw.obj_val) - float(raw.obj_val_dual)) / obj_scale
    comp = 0.0
    for _, sl in low.ineq_rows + low.nonneg_rows:
        comp = max(comp, float(np.abs(s[sl] * z[sl]).max(initial=0.0)))
    for _, sl in low.soc_rows:
        comp = max(comp, abs(float(s[sl] @ z[sl])))
    for name, sl in low.pow_rows:
        for start in range(sl.start, sl.stop, 3):
            comp = max(comp, abs(float(s[start : start + 3] @ z[start : start + 3])))
    residuals = ResidualReport(
        max_eq=feas.max_eq,
        max_ineq=feas.max_ineq,
        max_nonneg=feas.max_nonneg,
        max_cone=feas.max_cone,
        rel_gap=rel_gap,
        complementarity=comp / obj_scale,
    )

    meta = program.meta
    X = tuple(values[name] for name in meta.get("stage_x", []))
    L = tuple(values[name] for name in meta.get("stage_l", []))
    dual_names = list(meta.get("lam_blocks", {}))
    for name in (meta.get("epi_block"), "z"):
        if name in values and name not in dual_names:
            dual_names.append(name)
    duals = {name: values[name] for name in dual_names if name in values}
    constraint_duals = {name: z[sl].copy() for name, sl in low.eq_rows + low.ineq_rows}
    cone_duals = {name: z[sl].copy() for name, sl in low.soc_rows + low.pow_rows}
    return Solution(
        status=status,
        objective=objective,
        X=X,
        L=L,
        duals=duals,
        values=values,
        residuals=residuals,
        iterations=int(raw.iterations),
        note=note,
        program=program,
        constraint_duals=constraint_duals,
        cone_duals=cone_duals,
    )


# ---------------------------------------------------------------------------
# worst-case evaluation of a fixed decision


def worst_case_objective(program: ConvexProgram, X: tuple[np.ndarray, ...]) -> float:
    """Exact robust objective of a fixed dispatch under the program's set.

    Derives the fleet chain from the instance dynamics, then adds the
    demand set's support function evaluated at the equity coefficient
    vector c with c_{k,i} = beta * (b^k_i)^(-alpha) (or the fixed-demand
    cost for nominal programs).
    """
    meta = program.meta
    inst: DispatchInstance = meta["instance"]
    X = tuple(np.asarray(xk, dtype=float) for xk in X)
    supplies, _ = stage_chain(inst, X)
    if any(np.any(b <= 0) for b in supplies):
        raise ValueError("supply must be positive to evaluate the objective")
    dist = sum(j_d(xk, inst.W) for xk in X)
    c = inst.beta * np.concatenate([b**-inst.alpha for b in supplies])
    if meta["kind"] == "nominal":
        return meta.get("distance_weight", 1.0) * dist + float(
            c @ meta["demand"].flat()
        )
    return dist + meta["demand_set"].support(c)


# ---------------------------------------------------------------------------
# verification


@dataclass(frozen=True)
class VerificationReport:
    """Primal/dual accuracy of a Solution against its program.

    Residuals are raw violations; `ok` compares them against the target
    scaled by obj_scale = 1 + |objective| (matching the engine's relative
    termination measure).
    """

    max_eq: float
    max_ineq: float
    max_nonneg: float
    max_cone: float
    rel_gap: float
    complementarity: float
    objective_consistency: float
    antiparallel: float
    obj_scale: float
    flags: tuple[str, ...]

    def ok(self, tol: float) -> bool:
        primal = max(self.max_eq, self.max_ineq, self.max_nonneg, self.max_cone)
        return (
            primal <= 10 * tol * self.obj_scale
            and self.rel_gap <= 10 * tol
            and not any(f.startswith("violated") for f in self.flags)
        )


def verify_solution(
    sol: Solution, program: ConvexProgram | None = None, tol: float = 1e-7
) -> VerificationReport:
    """Re-check a solution from its raw values: primal feasibility, cone
    membership, complementarity, objective consistency, and the
    anti-parallel property of optimal dispatches."""
    program = program or sol.program
    if program is None:
        raise ValueError("no program attached to the solution")
    feas = check_feasibility(program, sol.values)
    obj_scale = 1.0 + abs(sol.objective)
    flags: list[str] = []
    if feas.max_eq > 10 * tol * obj_scale:
        flags.append(f"violated equality residual {feas.max_eq:.3g}")
    if feas.max_ineq > 10 * tol * obj_scale:
        flags.append(f"violated inequality residual {feas.max_ineq:.3g}")
    if feas.max_nonneg > 10 * tol * obj_scale:
        flags.append(f"violated nonnegativity {feas.max_nonneg:.3g}")
    if feas.max_cone > 10 * tol * obj_scale:
        flags.append(f"violated cone membership {feas.max_cone:.3g}")

    comp = 0.0
    for c in program.constraints:
        if c.sense != "ineq" or c.name not in sol.constraint_duals:
            continue
        g = c.expr.value(sol.values)
        y = sol.constraint_duals[c.name]
        comp = max(comp, float(np.abs(g * y).max(initial=0.0)))
    comp /= obj_scale

    consistency = abs(sol.objective - program.objective_value(sol.values)) / obj_scale

    anti = 0.0
    for k, xk in enumerate(sol.X):
        pair_min = np.minimum(xk, xk.T)
        np.fill_diagonal(pair_min, 0.0)
        worst = float(pair_min.max(initial=0.0))
        if worst > 1e-6:
            i, j = np.unravel_index(int(np.argmax(pair_min)), pair_min.shape)
            flags.append(
                f"anti-parallel flow at stage {k + 1} pair ({i},{j}): {worst:.3g}"
            )
        anti = max(anti, worst)

    return VerificationReport(
        max_eq=feas.max_eq,
        max_ineq=feas.max_ineq,
        max_nonneg=feas.max_nonneg,
        max_cone=feas.max_cone,
        rel_gap=sol.residuals.rel_gap,
        complementarity=comp,
        objective_consistency=consistency,
        antiparallel=anti,
        obj_scale=obj_scale,
        flags=tuple(flags),
    )


# ---------------------------------------------------------------------------
# flow normalization and rounding


def normalize_antiparallel(X: np.ndarray) -> np.ndarray:
    """Cancel opposing flows: X'_ij = max(X_ij - X_ji, 0).

    Leaves the supply vector exactly unchanged and never increases the
    travel cost (W >= 0); idempotent.
    """
    X = np.asarray(X, dtype=float)
    if np.any(X < 0):
        raise ValueError("flows must be nonnegative")
    return np.maximum(X - X.T, 0.0)


def _round_stages(
    inst: DispatchInstance, X: tuple[np.ndarray, ...]
) -> list[np.ndarray]:
    """Floor each stage, repair supply deficits, re-add fractional mass."""
    masks = inst.masks()
    L = inst.L1
    out: list[np.ndarray] = []
    for k in range(inst.tau):
        x = np.maximum(np.asarray(X[k], dtype=float), 0.0)
        x = np.where(masks[k], x, 0.0)
        fl = np.floor(x + 1e-9)
        frac = np.maximum(x - fl, 0.0)
        np.fill_diagonal(frac, 0.0)  # self-loops carry no vehicles anywhere
        b = fl.sum(axis=0) - fl.sum(axis=1) + L

        # repair: regions below one vehicle first cancel their own outflows
        # (richest receiver first), then pull whole vehicles from donors
        for _ in range(inst.n * inst.n + 4):
            i = int(np.argmin(b))
            if b[i] >= 1.0 - 1e-9:
                break
            need = int(math.ceil(1.0 - b[i] - 1e-9))
            progress = False
            for j in np.argsort(-b, kind="stable"):
                if need <= 0:
                    break
                if j == i or fl[i, j] <= 0:
                    continue
                d = int(min(fl[i, j], need))
                fl[i, j] -= d
                b[i] += d
                b[j] -= d
                need -= d
                progress = progress or d > 0
            for j in np.argsort(-b, kind="stable"):
                if need <= 0:
                    break
                if j == i or not masks[k][j, i]:
                    continue
                d = int(min(max(math.floor(b[j] - 1.0 + 1e-9), 0), need))
                if d <= 0:
                    continue
                fl[j, i] += d
                b[j] -= d
                b[i] += d
                need -= d
                progress = True
            if not progress:
                break

        # greedy re-add of the dropped fractional mass, largest fraction
        # first, only where the donor keeps at least one vehicle
        units = int(math.floor(frac.sum() + 0.5))
        order = np.argsort(-frac.ravel(), kind="stable")
        order = [int(e) for e in order if frac.ravel()[e] > 0]
        while units > 0:
            added = False
            for e in order:
                if units <= 0:
                    break
                i, j = divmod(e, inst.n)
                if b[i] >= 2.0 - 1e-9 and masks[k][i, j]:
                    fl[i, j] += 1
                    b[i] -= 1
                    b[j] += 1
                    units -= 1
                    added = True
            if not added:
                break

        out.append(fl)
        if k + 1 < inst.tau:
            L = inst.P[k].T @ b
    return out


def pin_decisions(
    program: ConvexProgram, X: list[np.ndarray]
) -> ConvexProgram:
    """Copy of the program with every stage matrix fixed by equalities."""
    meta = program.meta
    extra = []
    for name, xk in zip(meta["stage_x"], X):
        size = xk.size
        extra.append(
            LinearConstraint(
                affine({name: np.eye(size)}, const=-np.asarray(xk).ravel()),
                "eq",
                name=f"pin_{name}",
            )
        )
    return ConvexProgram(
        blocks=program.blocks,
        objective=program.objective,
        norm_terms=program.norm_terms,
        constraints=program.constraints + tuple(extra),
        power_epigraphs=program.power_epigraphs,
        meta=dict(meta, pinned=True),
    )


def round_solution(
    sol: Solution, opts: SolverOptions = SolverOptions()
) -> Solution:
    """Integer dispatch built from an optimal fractional solution.

    Per stage: floor, repair any region pushed below one vehicle, then
    greedily re-add the dropped fractional mass along the largest
    fractions wherever supply and reachability allow.  The multipliers
    are then re-certified by solving the program with the stage matrices
    pinned, and the relative objective degradation is reported.
    """
    if sol.status != "optimal":
        raise ValueError("rounding requires an optimal solution")
    if sol.program is None:
        raise ValueError("no program attached to the solution")
    inst: DispatchInstance = sol.program.meta["instance"]
    X_int = _round_stages(inst, sol.X)
    pinned = pin_decisions(sol.program, X_int)
    rsol = solve(pinned, opts)
    if rsol.status != "optimal":
        return replace(rsol, degradation=None)
    # snap the decision blocks to the exact integers and re-propagate the
    # fleet chain so the returned point is self-consistent
    values = dict(rsol.values)
    meta = sol.program.meta
    for name, xk in zip(meta["stage_x"], X_int):
        values[name] = xk.copy()
    _, splits = stage_chain(inst, tuple(X_int))
    for name, lk in zip(meta["stage_l"], splits[1:]):
        values[name] = lk
    objective = pinned.objective_value(values)
    degradation = (objective - sol.objective) / max(1.0, abs(sol.objective))
    return replace(
        rsol,
        objective=objective,
        X=tuple(xk.copy() for xk in X_int),
        L=tuple(splits[1:]),
        values=values,
        degradation=degradation,
    )


# ---------------------------------------------------------------------------
# brute-force oracles for tiny instances


@dataclass(frozen=True)
class OracleConfig:
    """Grid sizes for the desk-scale ground-truth search.

    x_resolution is the target number of grid points per decision entry
    (reduced automatically so a level stays under max_points);
    set_resolution is the per-dimension resolution when a mean/covariance
    set is discretized; use_vertices switches polytope inner maxima
    between explicit vertex enumeration and an exact LP evaluation.
    """

    x_resolution: int = 7
    set_resolution: int = 13
    use_vertices: bool = True
    vertex_cap: int = 200_000
    levels: int = 18
    shrink: float = 0.55
    max_points: int = 700_000
    polish_iters: int = 40
    soc_inner: str = "support"  # "support" | "grid" inner max inside minimax

    def __post_init__(self):
        if self.x_resolution < 2 or self.set_resolution < 2:
            raise ValueError("grid resolutions must be >= 2")
        if not (0 < self.shrink < 1):
            raise ValueError("shrink factor must lie in (0, 1)")
        if self.soc_inner not in ("support", "grid"):
            raise ValueError("soc_inner must be 'support' or 'grid'")


def polytope_vertices(pset: PolytopeSet, cap: int = 200_000) -> np.ndarray:
    """Vertices of {r >= 0 : A r <= b} by basic-solution enumeration."""
    from itertools import combinations

    A_full, b_full = pset.stacked()
    d = pset.dim
    rows = np.vstack([A_full, -np.eye(d)])
    rhs = np.concatenate([b_full, np.zeros(d)])
    n_sys = math.comb(rows.shape[0], d)
    if n_sys > cap:
        raise ValueError(
            f"vertex enumeration blow-up: C({rows.shape[0]},{d}) = {n_sys} > {cap}"
        )
    found = []
    for idx in combinations(range(rows.shape[0]), d):
        M = rows[list(idx)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        v = np.linalg.solve(M, rhs[list(idx)])
        if np.all(rows @ v <= rhs + 1e-9):
            found.append(v)
    if not found:
        raise ValueError("polytope has no vertices (empty set)")
    pts = np.asarray(found)
    keys = np.round(pts, 9)
    _, keep = np.unique(keys, axis=0, return_index=True)
    return pts[np.sort(keep)]


def _soc_membership_batch(soc: SocSet, points: np.ndarray, tol: float) -> np.ndarray:
    """Vectorized trust-region membership test for a batch of points."""
    pts = np.asarray(points, dtype=float)
    mask = np.all(pts >= -tol, axis=1)
    v = pts - soc.center[None, :]
    U, sig, _ = np.linalg.svd(soc.C.T)
    a = v @ U  # (batch, d): coordinates of v in the left singular basis
    wb = soc.w_bound
    pos = sig > 1e-14
    a_pos = a[:, pos]
    sig_pos = sig[pos]
    resid_perp_sq = np.sum(a[:, ~pos] ** 2, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        w_un = a_pos / sig_pos[None, :]
    unconstrained = np.sqrt(np.sum(w_un**2, axis=1)) <= wb
    resid_sq = np.where(unconstrained, resid_perp_sq, np.inf)

    need = ~unconstrained
    if np.any(need) and wb > 0:
        an = a_pos[need]
        hi = np.full(an.shape[0], max(sig_pos.max() * 1.0, 1.0))
        norm_at = lambda mu: np.sqrt(
            np.sum((sig_pos[None, :] * an / (sig_pos[None, :] ** 2 + mu[:, None])) ** 2, axis=1)
        )
        while np.any(norm_at(hi) > wb):
            hi = np.where(norm_at(hi) > wb, hi * 2.0, hi)
        lo = np.zeros_like(hi)
        for _ in range(90):
            mid = 0.5 * (lo + hi)
            too_big = norm_at(mid) > wb
            lo = np.where(too_big, mid, lo)
            hi = np.where(too_big, hi, mid)
        mu = 0.5 * (lo + hi)
        err = np.sum((an * mu[:, None] / (sig_pos[None, :] ** 2 + mu[:, None])) ** 2, axis=1)
        resid_sq[need] = resid_perp_sq[need] + err
    elif np.any(need):  # w_bound = 0 forces w = 0
        resid_sq[need] = np.sum(a_pos[need] ** 2, axis=1) + resid_perp_sq[need]
    return mask & (np.sqrt(resid_sq) <= soc.gamma1 + tol)


def soc_grid_points(soc: SocSet, resolution: int, tol: float = 1e-9) -> np.ndarray:
    """Membership-filtered dense grid over the set's bounding box."""
    lo, hi = soc.bounding_box()
    lo = np.maximum(lo, 0.0)
    axes = [np.linspace(lo[i], hi[i], resolution) for i in range(soc.dim)]
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    keep = _soc_membership_batch(soc, grid, tol)
    return grid[keep]


def _inner_max_batch(
    uset: UncertaintySet, C: np.ndarray, cfg: OracleConfig, mode: str
) -> np.ndarray:
    """max over r in the set of C[i] . r, vectorized over rows of C."""
    if isinstance(uset, BoxSet):
        return np.where(C >= 0, C * uset.upper[None, :], C * uset.lower[None, :]).sum(
            axis=1
        )
    if isinstance(uset, PolytopeSet):
        verts = polytope_vertices(uset, cfg.vertex_cap)
        return (C @ verts.T).max(axis=1)
    if isinstance(uset, SocSet):
        if mode == "grid":
            pts = soc_grid_points(uset, cfg.set_resolution)
            if pts.size == 0:
                raise ValueError("set grid is empty; raise the resolution")
            return (C @ pts.T).max(axis=1)
        norm_c = np.linalg.norm(C, axis=1)
        norm_cc = np.linalg.norm(C @ uset.C.T, axis=1)
        return C @ uset.center + uset.gamma1 * norm_c + uset.w_bound * norm_cc
    raise TypeError(f"unsupported set {type(uset).__name__}")


def oracle_inner_max(
    instance: DispatchInstance,
    X: tuple[np.ndarray, ...],
    L: tuple[np.ndarray, ...],
    uset: UncertaintySet,
    cfg: OracleConfig = OracleConfig(),
) -> float:
    """Worst-case total cost of a fixed decision, by direct search.

    Boxes evaluate at the maximizing corner; polytopes at their enumerated
    vertices (both exact, the objective being affine in demand); mean/
    covariance sets over a membership-filtered dense grid, which is a
    lower bound on the set maximum at finite resolution.
    """
    X = tuple(np.asarray(xk, dtype=float) for xk in X)
    L = tuple(np.asarray(lk, dtype=float) for lk in L)
    supplies = [supply(xk, lk) for xk, lk in zip(X, L)]
    if any(np.any(b <= 0) for b in supplies):
        raise ValueError("supply must be positive")
    dist = sum(j_d(xk, instance.W) for xk in X)
    c = instance.beta * np.concatenate([b**-instance.alpha for b in supplies])
    mode = "grid" if isinstance(uset, SocSet) else "vertices"
    if isinstance(uset, PolytopeSet) and not cfg.use_vertices:
        return dist + uset.support(c)
    return dist + float(_inner_max_batch(uset, c[None, :], cfg, mode)[0])


def _stage_entry_maps(instance: DispatchInstance):
    """Off-diagonal mask-allowed entries and their supply effect per stage."""
    maps = []
    for mask in instance.masks():
        entries = [
            (i, j)
            for i in range(instance.n)
            for j in range(instance.n)
            if i != j and mask[i, j]
        ]
        M = np.zeros((instance.n, len(entries)))
        for e, (i, j) in enumerate(entries):
            M[j, e] += 1.0
            M[i, e] -= 1.0
        w = np.array([instance.W[i, j] for i, j in entries])
        maps.append((entries, M, w))
    return maps


def oracle_minimax(
    instance: DispatchInstance,
    uset: UncertaintySet,
    cfg: OracleConfig = OracleConfig(),
) -> float:
    """Ground-truth robust optimum for tiny instances by refined gridding.

    Grids only the mask-allowed off-diagonal dispatch entries (diagonal
    self-loops change nothing) and derives the fleet chain from the
    dynamics.  Each level shrinks the search ranges around the incumbent;
    a final coordinate descent polishes the best point.  Mean/covariance
    inner maxima default to the closed-form support function; the
    membership-grid route is available for cross-checks.
    """
    if instance.n > 3 or instance.tau > 2:
        raise ValueError("oracle is restricted to n <= 3, tau <= 2")
    maps = _stage_entry_maps(instance)
    dims = [len(entries) for entries, _, _ in maps]
    D = sum(dims)
    cap = instance.fleet_size
    soc_mode = cfg.soc_inner if isinstance(uset, SocSet) else "vertices"

    def evaluate(xflat: np.ndarray) -> np.ndarray:
        """Total worst-case cost per batch row; inf where infeasible."""
        batch = xflat.shape[0]
        cost = np.zeros(batch)
        feas = np.ones(batch, dtype=bool)
        cs = []
        L = np.broadcast_to(instance.L1, (batch, instance.n))
        off = 0
        for k, (entries, M, w) in enumerate(maps):
            xk = xflat[:, off : off + dims[k]]
            off += dims[k]
            b = L + xk @ M.T
            feas &= np.all(b >= 1.0 - 1e-12, axis=1)
            bs = np.where(b > 0, b, np.nan)
            cs.append(instance.beta * bs**-instance.alpha)
            cost += xk @ w
            if k + 1 < instance.tau:
                L = b @ instance.P[k]
        C = np.concatenate(cs, axis=1)
        idx = np.flatnonzero(feas)
        out = np.full(batch, np.inf)
        if idx.size:
            out[idx] = cost[idx] + _inner_max_batch(uset, C[idx], cfg, soc_mode)
        return out

    if D == 0:
        val = evaluate(np.zeros((1, 0)))[0]
        if not np.isfinite(val):
            raise ValueError("the zero dispatch is infeasible; no grid point exists")
        return float(val)

    res = max(2, min(cfg.x_resolution, int(cfg.max_points ** (1.0 / D))))
    lo = np.zeros(D)
    hi = np.full(D, cap)
    best_x = None
    best_val = np.inf
    for _ in range(cfg.levels):
        axes = [np.linspace(lo[d], hi[d], res) for d in range(D)]
        grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        vals = evaluate(grid)
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val = float(vals[i])
            best_x = grid[i].copy()
        if best_x is None:
            raise ValueError("feasible grid is empty")
        width = (hi - lo) * cfg.shrink
        lo = np.clip(best_x - width / 2, 0.0, cap)
        hi = np.clip(best_x + width / 2, 0.0, cap)
        hi = np.maximum(hi, lo + 1e-9)

    step = float(np.max(hi - lo)) or 1e-6
    x = best_x.copy()
    for _ in range(cfg.polish_iters):
        improved = False
        for d in range(D):
            for delta in (step, -step):
                cand = x.copy()
                cand[d] = min(max(cand[d] + delta, 0.0), cap)
                val = evaluate(cand[None, :])[0]
                if val < best_val - 1e-15:
                    best_val = float(val)
                    x = cand
                    improved = True
        if not improved:
            step *= 0.5
            if step < 1e-9:
                break
    return best_val


# ---------------------------------------------------------------------------
# text round-trip


def write_solution(out: io.TextIOBase, sol: Solution) -> None:
    textio.write_str(out, "format", "dispatch-solution-v1")
    textio.write_str(out, "status", sol.status)
    textio.write_scalar(out, "objective", sol.objective)
    textio.write_int(out, "iterations", sol.iterations)
    textio.write_int(out, "stages", len(sol.X))
    for k, xk in enumerate(sol.X):
        textio.write_matrix(out, f"X{k + 1}", xk)
    textio.write_int(out, "splits", len(sol.L))
    for k, lk in enumerate(sol.L):
        textio.write_vector(out, f"L{k + 2}", lk)
    textio.write_int(out, "duals", len(sol.duals))
    for name in sorted(sol.duals):
        textio.write_vector(out, f"dual.{name}", np.asarray(sol.duals[name]).ravel())
    r = sol.residuals
    for fname in ("max_eq", "max_ineq", "max_nonneg", "max_cone", "rel_gap",
                  "complementarity"):
        textio.write_scalar(out, f"residual.{fname}", getattr(r, fname))
    if sol.degradation is not None:
        textio.write_scalar(out, "degradation", sol.degradation)


def solution_to_text(sol: Solution) -> str:
    return textio.dumps(lambda out: write_solution(out, sol))


def read_solution(source) -> Solution:
    reader = textio.SectionReader(source)
    fmt = reader.read_str("format")
    if fmt != "dispatch-solution-v1":
        raise ValueError(f"unexpected format {fmt!r}")
    status = reader.read_str("status")
    objective = reader.read_scalar("objective")
    iterations = reader.read_int("iterations")
    stages = reader.read_int("stages")
    X = tuple(reader.read_matrix(f"X{k + 1}") for k in range(stages))
    splits = reader.read_int("splits")
    L = tuple(reader.read_vector(f"L{k + 2}") for k in range(splits))
    n_duals = reader.read_int("duals")
    duals = {}
    for _ in range(n_duals):
        key = reader.peek_key()
        duals[key.removeprefix("dual.")] = reader.read_vector(key)
    res = {}
    for fname in ("max_eq", "max_ineq", "max_nonneg", "max_cone", "rel_gap",
                  "complementarity"):
        res[fname] = reader.read_scalar(f"residual.{fname}")
    degradation = None
    if reader.peek_key() == "degradation":
        degradation = reader.read_scalar("degradation")
    values = {f"X{k + 1}": xk for k, xk in enumerate(X)}
    values.update({f"L{k + 2}": lk for k, lk in enumerate(L)})
    return Solution(
        status=status,
        objective=objective,
        X=X,
        L=L,
        duals=duals,
        values=values,
        residuals=ResidualReport(**res),
        iterations=iterations,
        degradation=degradation,
    )
