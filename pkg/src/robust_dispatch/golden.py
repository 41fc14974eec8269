"""Golden regression suite: tiny hand-built robust dispatch cases.

Each case pairs a 2- or 3-region instance (horizon 1 or 2) with one
demand set drawn from the four supported shapes — componentwise box,
stagewise polytope, cross-stage coupled polytope, and mean/covariance
(second-order cone) set — small enough for the exhaustive grid oracle
to certify the reformulated optimum.  Construction is fully
deterministic: every number is written out, nothing is sampled.

Mean/covariance cases keep their radii small relative to the center so
the componentwise hull stays inside the nonnegative orthant; that is
asserted at build time, and it is what makes the cone reformulation of
the inner maximum exact (the maximizer never needs the r >= 0 cut).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import DispatchInstance
from .solve import OracleConfig
from .uncertainty import BoxSet, PolytopeSet, SocSet, UncertaintySet

SET_KINDS = ("box", "polytope_per_stage", "polytope_coupled", "soc")


@dataclass(frozen=True)
class GoldenCase:
    """One reformulation-vs-oracle regression point."""

    name: str
    instance: DispatchInstance
    uset: UncertaintySet
    set_kind: str
    oracle: OracleConfig = field(default_factory=OracleConfig)

    def __post_init__(self):
        if self.set_kind not in SET_KINDS:
            raise ValueError(f"unknown set kind {self.set_kind!r}")
        if self.uset.dim != self.instance.tau * self.instance.n:
            raise ValueError("set dimension must equal tau * n")
        if isinstance(self.uset, SocSet):
            lo, _ = self.uset.bounding_box()
            if np.any(lo < 0):
                raise ValueError(
                    f"{self.name}: mean/covariance hull leaves the nonnegative "
                    "orthant; shrink the radii"
                )


# --------------------------------------------------------------------------
# instance builders (explicit numbers, no randomness)


def _inst_2(tau: int, *, L1=(6.0, 4.0), m=3.0, alpha=0.1, beta=10.0) -> DispatchInstance:
    W = np.array([[0.0, 1.0], [1.3, 0.0]])
    P = (np.array([[0.7, 0.3], [0.4, 0.6]]),) * (tau - 1)
    return DispatchInstance(
        n=2, tau=tau, W=W, P=P, L1=np.array(L1, dtype=float), m=m, alpha=alpha, beta=beta
    )


def _inst_3(tau: int, *, L1=(5.0, 4.0, 3.0), m=3.0, alpha=0.1, beta=10.0) -> DispatchInstance:
    W = np.array(
        [
            [0.0, 1.0, 2.1],
            [1.1, 0.0, 1.2],
            [2.0, 1.4, 0.0],
        ]
    )
    P = (
        np.array(
            [
                [0.6, 0.2, 0.2],
                [0.3, 0.5, 0.2],
                [0.2, 0.3, 0.5],
            ]
        ),
    ) * (tau - 1)
    return DispatchInstance(
        n=3, tau=tau, W=W, P=P, L1=np.array(L1, dtype=float), m=m, alpha=alpha, beta=beta
    )


def _ring_inst_3(tau: int) -> DispatchInstance:
    """Distance cap 1.25 leaves only the short ring edges dispatchable,
    keeping the oracle's search space small at n=3, tau=2."""
    W = np.array(
        [
            [0.0, 1.0, 2.1],
            [2.2, 0.0, 1.2],
            [1.1, 2.3, 0.0],
        ]
    )
    P = (
        np.array(
            [
                [0.5, 0.3, 0.2],
                [0.2, 0.6, 0.2],
                [0.3, 0.2, 0.5],
            ]
        ),
    ) * (tau - 1)
    return DispatchInstance(
        n=3, tau=tau, W=W, P=P, L1=np.array([5.0, 4.0, 3.0]), m=1.25, alpha=0.1, beta=10.0
    )


# --------------------------------------------------------------------------
# set builders


def _box(center, spread) -> BoxSet:
    c = np.asarray(center, dtype=float)
    s = np.asarray(spread, dtype=float) * np.ones_like(c)
    return BoxSet(lower=np.maximum(c - s, 0.0), upper=c + s)


def _budget_stage(n: int, lower, upper, budget: float):
    """Rows of {r >= lower, r <= upper, sum r <= budget} in Ar <= b form."""
    A = np.vstack([np.eye(n), -np.eye(n), np.ones((1, n))])
    b = np.concatenate([np.full(n, upper), -np.full(n, lower), [budget]])
    return A, b


def _per_stage_polytope(tau: int, n: int, lower, upper, budget) -> PolytopeSet:
    blocks = [_budget_stage(n, lower, upper, budget) for _ in range(tau)]
    return PolytopeSet(
        A=tuple(A for A, _ in blocks),
        b_stages=tuple(b for _, b in blocks),
        per_stage=True,
    )


def _coupled_polytope(tau: int, n: int, lower, upper, total_budget) -> PolytopeSet:
    """Box rows per coordinate plus one budget row tying all stages."""
    d = tau * n
    A_full = np.vstack([np.eye(d), -np.eye(d), np.ones((1, d))])
    b = np.concatenate([np.full(d, upper), -np.full(d, lower), [total_budget]])
    blocks = tuple(A_full[:, k * n : (k + 1) * n] for k in range(tau))
    return PolytopeSet(A=blocks, b=b, per_stage=False)


def _soc(center, gamma1: float, gamma2: float, scale, epsilon: float = 0.25) -> SocSet:
    c = np.asarray(center, dtype=float)
    d = c.size
    cov = np.diag(np.asarray(scale, dtype=float) * np.ones(d))
    C = np.linalg.cholesky(cov + gamma2 * np.eye(d)).T
    return SocSet(center=c, gamma1=gamma1, gamma2=gamma2, C=C, epsilon=epsilon, sigma_hat=cov)


# --------------------------------------------------------------------------


def golden_cases() -> tuple[GoldenCase, ...]:
    """The regression suite; deterministic order and content."""
    small = OracleConfig()
    ring = OracleConfig(x_resolution=5, levels=16, max_points=250_000)

    cases: list[GoldenCase] = []

    def add(name, instance, uset, set_kind, oracle=small):
        cases.append(GoldenCase(name, instance, uset, set_kind, oracle))

    # --- n=2, tau=1 -------------------------------------------------------
    i21 = _inst_2(1)
    add("b21_base", i21, _box([3.0, 5.0], 1.0), "box")
    add("b21_sharp", _inst_2(1, alpha=0.6), _box([4.0, 2.0], 0.5), "box")
    add("b21_cheap", _inst_2(1, beta=2.0), _box([2.0, 6.0], 1.5), "box")
    add("p21_budget", i21, _per_stage_polytope(1, 2, 1.0, 6.0, 8.0), "polytope_per_stage")
    add(
        "p21_coupled",
        i21,
        _coupled_polytope(1, 2, 1.0, 6.0, 8.5),
        "polytope_coupled",
    )
    add("s21_base", i21, _soc([4.0, 4.0], 0.3, 0.04, 0.2), "soc")
    add("s21_tight", _inst_2(1, L1=(7.0, 3.0)), _soc([3.0, 6.0], 0.2, 0.01, 0.1), "soc")

    # --- n=3, tau=1 -------------------------------------------------------
    i31 = _inst_3(1)
    add("b31_base", i31, _box([3.0, 4.0, 5.0], 1.0), "box")
    add("b31_skew", _inst_3(1, L1=(8.0, 2.0, 2.0)), _box([2.0, 5.0, 3.0], 0.8), "box")
    add("p31_budget", i31, _per_stage_polytope(1, 3, 1.0, 5.0, 10.0), "polytope_per_stage")
    add("p31_coupled", i31, _coupled_polytope(1, 3, 1.0, 5.0, 9.0), "polytope_coupled")
    add("s31_base", i31, _soc([3.0, 4.0, 3.0], 0.25, 0.02, 0.15), "soc")

    # --- n=2, tau=2 -------------------------------------------------------
    i22 = _inst_2(2)
    add("b22_base", i22, _box([3.0, 5.0, 4.0, 4.0], 1.0), "box")
    add("b22_late", _inst_2(2, m=(3.0, 1.1)), _box([3.0, 3.0, 5.0, 2.0], 0.7), "box")
    add(
        "p22_stages",
        i22,
        _per_stage_polytope(2, 2, 1.0, 6.0, 8.0),
        "polytope_per_stage",
    )
    add(
        "p22_tilted",
        _inst_2(2, L1=(7.0, 3.0)),
        _per_stage_polytope(2, 2, 0.5, 5.0, 7.0),
        "polytope_per_stage",
    )
    add(
        "p22_coupled",
        i22,
        _coupled_polytope(2, 2, 1.0, 5.0, 14.0),
        "polytope_coupled",
    )
    add("s22_base", i22, _soc([4.0, 4.0, 3.0, 5.0], 0.3, 0.04, 0.2), "soc")
    add(
        "s22_heavy",
        _inst_2(2, beta=20.0),
        _soc([3.0, 3.0, 3.0, 3.0], 0.2, 0.02, 0.1, epsilon=0.1),
        "soc",
    )

    # --- n=3, tau=2 (ring mask keeps the oracle grid small) ---------------
    r32 = _ring_inst_3(2)
    add("b32_ring", r32, _box([3.0, 4.0, 3.0, 4.0, 3.0, 4.0], 0.8), "box", ring)
    add(
        "p32_stages",
        r32,
        _per_stage_polytope(2, 3, 1.0, 5.0, 10.0),
        "polytope_per_stage",
        ring,
    )
    add(
        "p32_coupled",
        r32,
        _coupled_polytope(2, 3, 1.0, 5.0, 21.0),
        "polytope_coupled",
        ring,
    )
    add("s32_ring", r32, _soc([3.0, 3.5, 3.0, 3.5, 3.0, 3.5], 0.25, 0.02, 0.12), "soc", ring)

    return tuple(cases)


def coverage() -> dict[str, set[tuple[int, int]]]:
    """(n, tau) shapes exercised per set kind."""
    out: dict[str, set[tuple[int, int]]] = {k: set() for k in SET_KINDS}
    for case in golden_cases():
        out[case.set_kind].add((case.instance.n, case.instance.tau))
    return out
