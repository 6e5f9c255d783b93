import numpy as np
import pytest
from oracles import enumerate_box_solution

from obsum.bvls import SolverError, bvls


def test_unconstrained_interior_solution():
    A = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    target = np.array([0.2, 0.8])
    y = A @ target
    x = bvls(A, y)
    assert np.allclose(x, target, atol=1e-10)


def test_solution_clamped_at_bounds():
    # unconstrained optimum lies outside the box
    A = np.eye(2)
    y = np.array([1.7, -0.4])
    x = bvls(A, y)
    assert np.allclose(x, [1.0, 0.0], atol=1e-12)


def test_matches_enumeration_random_full_rank():
    rng = np.random.default_rng(42)
    for trial in range(200):
        n = int(rng.integers(1, 4))
        m = int(rng.integers(n, n + 6))
        A = rng.random((m, n))
        # mix of interior and exterior targets
        target = rng.uniform(-0.5, 1.5, size=n)
        y = A @ target + rng.normal(0, 0.05, size=m)
        x = bvls(A, y)
        ref, ref_obj = enumerate_box_solution(A, y)
        obj = float(np.sum((A @ x - y) ** 2))
        assert obj <= ref_obj + 1e-8
        assert np.allclose(x, ref, atol=1e-8), (trial, x, ref)


def test_matches_enumeration_rank_deficient_objective():
    # duplicated column: the minimizer is not unique, compare objectives
    rng = np.random.default_rng(5)
    for _ in range(50):
        col = rng.random((6, 1))
        A = np.hstack([col, col, rng.random((6, 1))])
        y = rng.random(6)
        x = bvls(A, y)
        _, ref_obj = enumerate_box_solution(A, y)
        obj = float(np.sum((A @ x - y) ** 2))
        assert obj <= ref_obj + 1e-8
        assert (x >= -1e-12).all() and (x <= 1 + 1e-12).all()


def test_residual_never_worse_than_trivial_points():
    rng = np.random.default_rng(9)
    for _ in range(100):
        n = int(rng.integers(1, 5))
        m = int(rng.integers(1, 8))
        A = rng.random((m, n))
        y = rng.random(m)
        x = bvls(A, y)
        obj = np.sum((A @ x - y) ** 2)
        zero_obj = np.sum(y ** 2)
        z, *_ = np.linalg.lstsq(A, y, rcond=None)
        clamped_obj = np.sum((A @ np.clip(z, 0, 1) - y) ** 2)
        assert obj <= zero_obj + 1e-10
        assert obj <= clamped_obj + 1e-10


def test_output_always_within_box():
    rng = np.random.default_rng(17)
    for _ in range(100):
        A = rng.normal(size=(4, 3))
        y = rng.normal(size=4) * 3
        x = bvls(A, y)
        assert (x >= 0).all() and (x <= 1).all()


def test_bad_shapes_rejected():
    with pytest.raises(ValueError):
        bvls(np.zeros((3, 2)), np.zeros(4))
