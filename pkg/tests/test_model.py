"""Instance validation, cost functions, supply dynamics, nominal build."""

import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robust_dispatch.model import (
    DecisionVars,
    DispatchInstance,
    NominalDemand,
    build_nominal,
    j_d,
    j_e,
    mismatch,
    propagate_fleet,
    reachability_mask,
    read_demand,
    read_instance,
    stage_chain,
    supply,
    write_demand,
    write_instance,
)
from robust_dispatch.solve import solve


def rand_flow(rng, n, scale=2.0):
    X = rng.uniform(0.0, scale, size=(n, n))
    np.fill_diagonal(X, 0.0)
    return X


# ---------------------------------------------------------------------------
# instance validation


def test_instance_rejects_nonzero_diagonal():
    with pytest.raises(ValueError):
        DispatchInstance(
            n=2, tau=1, W=np.array([[0.1, 1.0], [1.0, 0.0]]), P=(), L1=np.ones(2) * 3, m=2.0
        )


def test_instance_rejects_non_stochastic_transition():
    with pytest.raises(ValueError):
        DispatchInstance(
            n=2,
            tau=2,
            W=np.array([[0.0, 1.0], [1.0, 0.0]]),
            P=(np.array([[0.9, 0.2], [0.5, 0.5]]),),
            L1=np.ones(2) * 3,
            m=2.0,
        )


def test_instance_broadcasts_scalar_cap(inst2_t2):
    assert inst2_t2.m == (3.0, 3.0)


def test_instance_rejects_tiny_fleet():
    with pytest.raises(ValueError):
        DispatchInstance(
            n=3,
            tau=1,
            W=np.zeros((3, 3)),
            P=(),
            L1=np.array([0.5, 0.5, 0.5]),
            m=1.0,
        )


def test_fleet_size(inst2):
    assert inst2.fleet_size == pytest.approx(10.0)


# ---------------------------------------------------------------------------
# cost pieces against independent formulas


@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_supply_formula_matches_loops(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    X = rand_flow(rng, n)
    L = rng.uniform(1.0, 4.0, size=n)
    b = supply(X, L)
    manual = np.array(
        [X[:, i].sum() - X[i, :].sum() + L[i] for i in range(n)]
    )
    np.testing.assert_allclose(b, manual, atol=1e-12)
    # total conserved
    assert b.sum() == pytest.approx(L.sum())


@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_supply_ignores_diagonal(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    X = rand_flow(rng, n)
    L = rng.uniform(1.0, 4.0, size=n)
    X_diag = X.copy()
    np.fill_diagonal(X_diag, rng.uniform(0.0, 5.0, size=n))
    np.testing.assert_allclose(supply(X, L), supply(X_diag, L), atol=1e-12)


def test_j_d_hand_value():
    W = np.array([[0.0, 2.0], [3.0, 0.0]])
    X = np.array([[0.0, 1.5], [0.5, 0.0]])
    assert j_d(X, W) == pytest.approx(2.0 * 1.5 + 3.0 * 0.5)


def test_j_e_hand_value():
    X = np.zeros((2, 2))
    L = np.array([4.0, 1.0])
    r = np.array([2.0, 3.0])
    expected = 2.0 * 4.0**-0.5 + 3.0 * 1.0**-0.5
    assert j_e(X, L, r, alpha=0.5) == pytest.approx(expected)


def test_j_e_rejects_nonpositive_supply():
    X = np.array([[0.0, 0.0], [2.0, 0.0]])  # drains region 1 below zero
    L = np.array([3.0, 1.0])
    with pytest.raises(ValueError):
        j_e(X, L, np.array([1.0, 1.0]), alpha=0.5)


def test_mismatch_glossary_formula():
    X = np.zeros((2, 2))
    L = np.array([4.0, 6.0])
    r = np.array([2.0, 3.0])
    avg = r.sum() / L.sum()
    expected = abs(2.0 / 4.0 - avg) + abs(3.0 / 6.0 - avg)
    assert mismatch(X, L, r) == pytest.approx(expected)


def test_mismatch_zero_when_proportional():
    X = np.zeros((3, 3))
    L = np.array([2.0, 4.0, 6.0])
    r = 0.5 * L
    assert mismatch(X, L, r) == pytest.approx(0.0, abs=1e-12)


def test_reachability_mask(inst2):
    mask = reachability_mask(inst2.W, 1.1)
    assert mask[0, 1] and not mask[1, 0]


def test_propagate_fleet_mixes(inst2_t2):
    X = np.array([[0.0, 2.0], [0.0, 0.0]])
    L = np.array([8.0, 2.0])
    L2 = propagate_fleet(X, L, inst2_t2.P[0])
    np.testing.assert_allclose(L2, inst2_t2.P[0].T @ supply(X, L))
    assert L2.sum() == pytest.approx(L.sum())


# ---------------------------------------------------------------------------
# decision containers and the nominal program


def test_decision_violations_clean(inst2_t2):
    X1 = np.array([[0.0, 2.0], [0.0, 0.0]])
    L2 = propagate_fleet(X1, inst2_t2.L1, inst2_t2.P[0])
    X2 = np.zeros((2, 2))
    dv = DecisionVars(X=(X1, X2), L=(inst2_t2.L1, L2))
    assert dv.violations(inst2_t2) == []


def test_decision_violations_flags_mask_and_supply(inst2_t2):
    X1 = np.array([[0.0, 0.0], [5.5, 0.0]])  # drains region 2, cap obeyed
    assert supply(X1, inst2_t2.L1)[1] < 1.0
    L2 = propagate_fleet(X1, inst2_t2.L1, inst2_t2.P[0])
    dv = DecisionVars(X=(X1, np.zeros((2, 2))), L=(inst2_t2.L1, L2))
    msgs = " ".join(dv.violations(inst2_t2))
    assert "supply" in msgs


def test_decision_violations_flags_bad_dynamics(inst2_t2):
    X1 = np.zeros((2, 2))
    dv = DecisionVars(X=(X1, X1), L=(inst2_t2.L1, np.array([9.0, 1.0])))
    msgs = " ".join(dv.violations(inst2_t2))
    assert "dynamics" in msgs


def test_stage_chain_consistency(inst2_t2):
    rng = np.random.default_rng(3)
    X = tuple(rand_flow(rng, 2, scale=0.5) for _ in range(2))
    supplies, splits = stage_chain(inst2_t2, X)
    np.testing.assert_allclose(splits[0], inst2_t2.L1)
    np.testing.assert_allclose(supplies[0], supply(X[0], inst2_t2.L1))
    np.testing.assert_allclose(
        splits[1], propagate_fleet(X[0], inst2_t2.L1, inst2_t2.P[0])
    )


def test_build_nominal_solves_to_manual_optimum(inst2):
    # with zero demand the equity term vanishes; X = 0 is optimal
    demand = NominalDemand(r=np.zeros((1, 2)))
    sol = solve(build_nominal(inst2, demand))
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(0.0, abs=1e-6)
    assert np.abs(sol.X[0]).max() <= 1e-6  # self-loops pinned, off-diagonal idle


def test_build_nominal_matches_cost_functions(inst2):
    demand = NominalDemand(r=np.array([[3.0, 5.0]]))
    prog = build_nominal(inst2, demand)
    sol = solve(prog)
    assert sol.status == "optimal"
    manual = j_d(sol.X[0], inst2.W) + inst2.beta * j_e(
        sol.X[0], inst2.L1, demand.r[0], inst2.alpha
    )
    assert sol.objective == pytest.approx(manual, rel=1e-6)


def test_nominal_demand_flat_order():
    d = NominalDemand(r=np.array([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_allclose(d.flat(), [1.0, 2.0, 3.0, 4.0])


# ---------------------------------------------------------------------------
# serialization


def test_instance_round_trip(inst2_t2):
    buf = io.StringIO()
    write_instance(buf, inst2_t2)
    back = read_instance(buf.getvalue())
    assert back.n == inst2_t2.n and back.tau == inst2_t2.tau
    np.testing.assert_array_equal(back.W, inst2_t2.W)
    np.testing.assert_array_equal(back.L1, inst2_t2.L1)
    np.testing.assert_array_equal(back.P[0], inst2_t2.P[0])
    assert back.m == inst2_t2.m


def test_demand_round_trip():
    d = NominalDemand(r=np.array([[1.5, 2.5], [0.0, 4.0]]))
    buf = io.StringIO()
    write_demand(buf, d)
    back = read_demand(buf.getvalue())
    np.testing.assert_array_equal(back.r, d.r)
