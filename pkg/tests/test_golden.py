"""Structural checks of the pinned desk-scale reference suite."""

import numpy as np
import pytest

from robust_dispatch.golden import SET_KINDS, GoldenCase, coverage, golden_cases
from robust_dispatch.uncertainty import PolytopeSet, SocSet


def test_suite_size_and_unique_names():
    cases = golden_cases()
    assert len(cases) >= 20
    names = [c.name for c in cases]
    assert len(set(names)) == len(names)


def test_coverage_spans_kinds_and_shapes():
    cov = coverage()
    assert set(cov) == set(SET_KINDS)
    shapes = {(2, 1), (3, 1), (2, 2), (3, 2)}
    for kind in SET_KINDS:
        assert cov[kind] == shapes, f"{kind} missing shapes {shapes - cov[kind]}"


def test_cases_stay_inside_oracle_restriction():
    for case in golden_cases():
        assert case.instance.n <= 3
        assert case.instance.tau <= 2
        assert case.uset.dim == case.instance.tau * case.instance.n


def test_polytope_cases_are_nonempty():
    for case in golden_cases():
        if isinstance(case.uset, PolytopeSet):
            point = case.uset.feasible_point()
            assert np.all(np.isfinite(point))


def test_soc_cases_have_nonnegative_hulls():
    for case in golden_cases():
        if isinstance(case.uset, SocSet):
            lower, upper = case.uset.bounding_box()
            assert np.all(lower >= -1e-12)
            assert np.all(upper >= lower)


def test_golden_case_rejects_negative_soc_hull(inst2):
    bad = SocSet(
        center=np.array([0.2, 0.2]),
        gamma1=1.0,  # ball pokes far below zero
        gamma2=0.0,
        C=np.zeros((2, 2)),
        epsilon=0.25,
    )
    with pytest.raises(ValueError, match="nonneg"):
        GoldenCase(name="bad", instance=inst2, uset=bad, set_kind="soc")


def test_golden_case_rejects_unknown_kind(inst2):
    from robust_dispatch.uncertainty import BoxSet

    box = BoxSet(lower=np.array([1.0, 1.0]), upper=np.array([2.0, 2.0]))
    with pytest.raises(ValueError):
        GoldenCase(name="bad", instance=inst2, uset=box, set_kind="mystery")


def test_golden_case_rejects_dimension_mismatch(inst2):
    from robust_dispatch.uncertainty import BoxSet

    box = BoxSet(lower=np.ones(4), upper=2 * np.ones(4))
    with pytest.raises(ValueError):
        GoldenCase(name="bad", instance=inst2, uset=box, set_kind="box")
