"""Discrete space construction, validation, and the weighted primitives."""

import numpy as np
import pytest

from gaugekit.errors import DimensionError, ParameterError
from gaugekit.space import (
    CostVector,
    DiscreteSpace,
    Reweighting,
    expectation,
    sample_uniform_box,
    settings,
    uniform_space,
    validate,
    weighted_inner,
)


def test_uniform_space_base_instance():
    sp = uniform_space([0.0, 1.0, 2.0, 3.0])
    assert sp.size == 4
    assert sp.dim == 1
    np.testing.assert_allclose(sp.weights, 0.25)
    assert validate(sp) == []


def test_scalar_points_reshape_to_column():
    sp = uniform_space([1.0, 2.0])
    assert sp.points.shape == (2, 1)


def test_duplicate_points_merge_and_pool_weight():
    sp = DiscreteSpace(np.array([0.0, 1.0, 1.0]), np.array([0.2, 0.3, 0.5]))
    assert sp.size == 2
    np.testing.assert_allclose(sp.weights, [0.2, 0.8])


def test_mismatched_lengths_rejected():
    with pytest.raises(DimensionError):
        DiscreteSpace(np.array([0.0, 1.0]), np.array([1.0]))


def test_empty_space_rejected():
    with pytest.raises(DimensionError):
        DiscreteSpace(np.zeros((0, 1)), np.zeros(0))


def test_nonfinite_points_rejected():
    with pytest.raises(ParameterError):
        DiscreteSpace(np.array([0.0, np.inf]), np.array([0.5, 0.5]))


def test_validate_reports_each_breach():
    sp = DiscreteSpace(np.array([0.0, 1.0]), np.array([-0.25, 0.5]))
    issues = validate(sp)
    assert len(issues) == 2  # negative weight and bad total
    assert any("positive" in msg for msg in issues)
    assert any("1" in msg for msg in issues)


def test_expectation_base_instance():
    sp = uniform_space([0.0, 1.0, 2.0, 3.0])
    assert expectation(sp, [0.0, 1.0, 2.0, 3.0]) == pytest.approx(1.5)
    assert expectation(sp, CostVector(np.arange(4.0))) == pytest.approx(1.5)


def test_expectation_length_checked():
    sp = uniform_space([0.0, 1.0])
    with pytest.raises(DimensionError):
        expectation(sp, [1.0, 2.0, 3.0])


def test_weighted_inner_bilinear():
    rng = np.random.default_rng(3)
    sp = DiscreteSpace(rng.normal(size=(5, 2)), rng.dirichlet(np.ones(5)))
    u, v, w = rng.normal(size=(3, 5))
    a, c = rng.normal(size=2)
    left = weighted_inner(sp, a * u + c * w, v)
    right = a * weighted_inner(sp, u, v) + c * weighted_inner(sp, w, v)
    assert left == pytest.approx(right, rel=1e-12)
    assert weighted_inner(sp, u, v) == pytest.approx(weighted_inner(sp, v, u))


def test_unit_reweighting_is_feasible():
    sp = uniform_space([0.0, 1.0, 2.0, 3.0])
    assert Reweighting(np.ones(4)).is_feasible(sp)
    assert not Reweighting(np.array([2.0, 1.0, 1.0, 1.0])).is_feasible(sp)
    assert not Reweighting(np.array([-0.5, 1.5, 1.5, 1.5])).is_feasible(sp)


def test_feasibility_tolerance_edges():
    sp = uniform_space([0.0, 1.0])
    tol = settings.feasibility_tol
    assert Reweighting(np.array([1.0 + 0.5 * tol, 1.0 + 0.5 * tol])).is_feasible(sp)
    assert not Reweighting(np.array([1.0 + 10 * tol, 1.0 + 10 * tol])).is_feasible(sp)
    assert not Reweighting(np.array([-10 * tol, 2.0 + 10 * tol])).is_feasible(sp)


def test_sample_uniform_box_reproducible():
    a = sample_uniform_box([0.0, 0.0], [1.0, 2.0], 16, seed=42)
    b = sample_uniform_box([0.0, 0.0], [1.0, 2.0], 16, seed=42)
    c = sample_uniform_box([0.0, 0.0], [1.0, 2.0], 16, seed=43)
    np.testing.assert_array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)
    assert a.size == 16 and a.dim == 2
    assert np.all(a.points[:, 0] <= 1.0) and np.all(a.points[:, 1] <= 2.0)
    assert validate(a) == []


def test_sample_uniform_box_guards():
    with pytest.raises(ParameterError):
        sample_uniform_box([0.0], [1.0], 0, seed=1)
    with pytest.raises(ParameterError):
        sample_uniform_box([1.0], [1.0], 4, seed=1)
    with pytest.raises(DimensionError):
        sample_uniform_box([0.0, 0.0], [1.0], 4, seed=1)


def test_cost_vector_finite_only():
    with pytest.raises(ParameterError):
        CostVector(np.array([1.0, np.nan]))
