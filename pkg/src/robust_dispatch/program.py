"""Solver-neutral convex program representation.

A program is a set of named variable blocks, a linear objective, optional
two-norm terms over affine maps, linear equality/inequality constraints,
and power-epigraph rows ``epi_i >= base_i^(-alpha)``.  Everything is kept
as dense numpy data; the structure is tiny at desk scale.  `solve` lowers
this to a conic solver; `export_program` dumps it as text so third-party
tools can cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import textio


@dataclass(frozen=True)
class VarBlock:
    name: str
    shape: tuple[int, ...]
    nonneg: bool = False

    def __post_init__(self):
        if not self.name:
            raise ValueError("variable block needs a name")
        if not self.shape or any(int(d) < 1 for d in self.shape):
            raise ValueError(f"block {self.name!r}: dimensions must be positive")

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


@dataclass(frozen=True)
class Affine:
    """rows-dimensional affine map: sum_name M_name @ vec(block) + const.

    vec() is row-major (C order).  Matrices have shape (rows, block size).
    """

    terms: dict[str, np.ndarray]
    const: np.ndarray

    def __post_init__(self):
        const = np.atleast_1d(np.asarray(self.const, dtype=float))
        const.setflags(write=False)
        object.__setattr__(self, "const", const)
        frozen = {}
        for name, m in self.terms.items():
            m = np.asarray(m, dtype=float)
            if m.ndim != 2 or m.shape[0] != const.size:
                raise ValueError(f"term {name!r}: expected ({const.size}, k) matrix")
            m.setflags(write=False)
            frozen[name] = m
        object.__setattr__(self, "terms", frozen)

    @property
    def rows(self) -> int:
        return self.const.size

    def value(self, values: dict[str, np.ndarray]) -> np.ndarray:
        out = self.const.copy()
        for name, m in self.terms.items():
            out = out + m @ np.asarray(values[name], dtype=float).ravel()
        return out


def affine(terms: dict[str, np.ndarray], const=None, rows: int | None = None) -> Affine:
    """Convenience constructor; const defaults to zeros."""
    if const is None:
        if rows is None:
            rows = next(iter(terms.values())).shape[0]
        const = np.zeros(rows)
    return Affine(terms=terms, const=const)


@dataclass(frozen=True)
class LinearConstraint:
    """expr <= 0 (sense 'ineq') or expr == 0 (sense 'eq')."""

    expr: Affine
    sense: str
    name: str = ""

    def __post_init__(self):
        if self.sense not in ("ineq", "eq"):
            raise ValueError("sense must be 'ineq' or 'eq'")


@dataclass(frozen=True)
class NormTerm:
    """weight * ||expr||_2 added to the objective (weight >= 0)."""

    weight: float
    expr: Affine

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("norm weights must be nonnegative")


@dataclass(frozen=True)
class PowerEpigraph:
    """Componentwise epi_i >= base_i^(-alpha), base_i > 0, alpha > 0.

    Equivalent to the power-cone relation
    epi^(1/(1+alpha)) * base^(alpha/(1+alpha)) >= 1.
    """

    epi: Affine
    base: Affine
    alpha: float
    name: str = ""

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.epi.rows != self.base.rows:
            raise ValueError("epi and base row counts differ")


@dataclass(frozen=True)
class ConvexProgram:
    blocks: tuple[VarBlock, ...]
    objective: Affine  # single row
    norm_terms: tuple[NormTerm, ...] = ()
    constraints: tuple[LinearConstraint, ...] = ()
    power_epigraphs: tuple[PowerEpigraph, ...] = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.objective.rows != 1:
            raise ValueError("objective must be a single affine row")
        names = {b.name for b in self.blocks}
        if len(names) != len(self.blocks):
            raise ValueError("duplicate variable block names")
        sizes = {b.name: b.size for b in self.blocks}

        def check(aff: Affine, where: str):
            for name, m in aff.terms.items():
                if name not in names:
                    raise ValueError(f"{where}: unknown variable {name!r}")
                if m.shape[1] != sizes[name]:
                    raise ValueError(f"{where}: bad column count for {name!r}")

        check(self.objective, "objective")
        for nt in self.norm_terms:
            check(nt.expr, "norm term")
        for c in self.constraints:
            check(c.expr, f"constraint {c.name!r}")
        for pe in self.power_epigraphs:
            check(pe.epi, f"power epigraph {pe.name!r}")
            check(pe.base, f"power epigraph {pe.name!r}")

    def block(self, name: str) -> VarBlock:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    def objective_value(self, values: dict[str, np.ndarray]) -> float:
        total = float(self.objective.value(values)[0])
        for nt in self.norm_terms:
            total += nt.weight * float(np.linalg.norm(nt.expr.value(values)))
        return total


@dataclass(frozen=True)
class FeasibilityReport:
    """Worst-case violations of a candidate point, by constraint family."""

    max_eq: float
    max_ineq: float
    max_nonneg: float
    max_cone: float

    @property
    def max_violation(self) -> float:
        return max(self.max_eq, self.max_ineq, self.max_nonneg, self.max_cone)


def check_feasibility(
    program: ConvexProgram, values: dict[str, np.ndarray]
) -> FeasibilityReport:
    """Evaluate primal violations of `values` against every constraint."""
    max_eq = max_ineq = max_nonneg = max_cone = 0.0
    for c in program.constraints:
        v = c.expr.value(values)
        if c.sense == "eq":
            max_eq = max(max_eq, float(np.abs(v).max(initial=0.0)))
        else:
            max_ineq = max(max_ineq, float(v.max(initial=0.0)))
    for b in program.blocks:
        if b.nonneg:
            x = np.asarray(values[b.name], dtype=float)
            max_nonneg = max(max_nonneg, float((-x).max(initial=0.0)))
    for pe in program.power_epigraphs:
        epi = pe.epi.value(values)
        base = pe.base.value(values)
        if np.any(base <= 0):
            max_cone = max(max_cone, float("inf"))
        else:
            max_cone = max(max_cone, float((base**-pe.alpha - epi).max(initial=0.0)))
    return FeasibilityReport(max_eq, max_ineq, max_nonneg, max_cone)


def export_program(program: ConvexProgram) -> str:
    """Text dump: blocks, objective, sparse triplets per constraint, cones."""

    def write_affine(out, tag: str, aff: Affine):
        textio.write_int(out, f"{tag}.rows", aff.rows)
        for name in sorted(aff.terms):
            m = aff.terms[name]
            nz = np.argwhere(m != 0.0)
            out.write(f"{tag}.triplets {name} {len(nz)}\n")
            for i, j in nz:
                out.write(f"{i} {j} {textio.format_real(m[i, j])}\n")
        textio.write_vector(out, f"{tag}.const", aff.const)

    def writer(out):
        textio.write_str(out, "format", "convex-program-v1")
        textio.write_int(out, "blocks", len(program.blocks))
        for b in program.blocks:
            shape = "x".join(str(s) for s in b.shape)
            textio.write_str(out, "block", f"{b.name} {shape} nonneg={int(b.nonneg)}")
        write_affine(out, "objective", program.objective)
        textio.write_int(out, "norm_terms", len(program.norm_terms))
        for i, nt in enumerate(program.norm_terms):
            textio.write_scalar(out, f"norm{i}.weight", nt.weight)
            write_affine(out, f"norm{i}", nt.expr)
        textio.write_int(out, "constraints", len(program.constraints))
        for i, c in enumerate(program.constraints):
            textio.write_str(out, f"constraint{i}", f"{c.sense} {c.name}")
            write_affine(out, f"constraint{i}", c.expr)
        textio.write_int(out, "power_epigraphs", len(program.power_epigraphs))
        for i, pe in enumerate(program.power_epigraphs):
            textio.write_scalar(out, f"power{i}.alpha", pe.alpha)
            write_affine(out, f"power{i}.epi", pe.epi)
            write_affine(out, f"power{i}.base", pe.base)

    return textio.dumps(writer)
