import math

import numpy as np
import pytest

from shapeopt.metric import GramOperator
from shapeopt.optim import (ALParams, AugmentedObjective, TRState,
                            augmented_lagrangian_solve, inner_solve)


class Quadratic:
    def __init__(self, a, b):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)

    def value(self, x):
        return float(0.5 * x @ self.a @ x - self.b @ x)

    def gradient(self, x):
        return self.a @ x - self.b

    def minimizer(self):
        return np.linalg.solve(self.a, self.b)


def test_quadratic_converges_quickly():
    quad = Quadratic([[3.0, 1.0], [1.0, 2.0]], [1.0, -2.0])
    gram = GramOperator.from_matrix(quad.a)
    res = inner_solve(quad, np.zeros(2), gram, TRState(), omega=1e-10)
    assert res.iterations <= 10
    assert np.linalg.norm(res.control - quad.minimizer()) <= 1e-8


def test_first_step_is_metric_steepest_descent():
    # with empty memory the model Hessian is G, so an interior first step
    # solves G d = -g exactly
    gmat = np.array([[2.5, 0.4], [0.4, 1.2]])
    gram = GramOperator.from_matrix(gmat)
    g0 = np.array([0.3, -0.9])

    class Linearish:
        def value(self, x):
            return float(g0 @ x + 50.0 * max(np.linalg.norm(x) - 1.0, 0.0))

        def gradient(self, x):
            return g0

    accepted = []
    inner_solve(Linearish(), np.zeros(2), gram,
                TRState(radius=100.0, max_iterations=1), omega=1e-14,
                callback=lambda x, *a: accepted.append(np.array(x)))
    expected = np.linalg.solve(gmat, -g0)
    assert accepted and np.abs(accepted[0] - expected).max() <= 1e-12


def test_nan_everywhere_terminates_step_too_small():
    class NaNAway:
        def value(self, x):
            return 0.0 if np.allclose(x, 0.0) else float("nan")

        def gradient(self, x):
            return np.array([1.0, 1.0])

    gram = GramOperator.from_matrix(np.eye(2))
    res = inner_solve(NaNAway(), np.zeros(2), gram,
                      TRState(radius=1.0, step_min=1e-4), omega=1e-12)
    assert res.reason == "step_too_small"
    assert np.array_equal(res.control, np.zeros(2))
    assert res.accepted == 0


def test_zero_gradient_returns_immediately():
    class Flat:
        def value(self, x):
            return 2.5

        def gradient(self, x):
            return np.zeros(3)

    res = inner_solve(Flat(), np.zeros(3), GramOperator.from_matrix(np.eye(3)),
                      TRState(), omega=1e-8)
    assert res.iterations == 0
    assert res.reason == "gradient_tolerance"


def test_nan_ball_never_crashes_and_returns_finite():
    class NaNBall:
        def value(self, x):
            if np.linalg.norm(x) > 0.05:
                return float("nan")
            return float(x @ x - x[0])

        def gradient(self, x):
            return 2.0 * x - np.array([1.0, 0.0])

    gram = GramOperator.from_matrix(np.eye(2))
    res = inner_solve(NaNBall(), np.zeros(2), gram, TRState(radius=1.0),
                      omega=1e-8)
    assert np.isfinite(res.value)
    assert np.isfinite(res.control).all()


def test_accepted_values_are_non_increasing():
    quad = Quadratic([[4.0, 0.5], [0.5, 1.0]], [1.0, 3.0])
    gram = GramOperator.from_matrix(np.eye(2))
    seen = []

    class Tracking(Quadratic):
        def value(self, x):
            v = super().value(x)
            return v

    model = Tracking(quad.a, quad.b)
    values = []

    def cb(x, fval, gnorm, step_norm, radius, it):
        values.append(fval)

    inner_solve(model, np.array([5.0, -5.0]), gram,
                TRState(radius=0.5), omega=1e-10, callback=cb)
    assert all(values[i + 1] <= values[i] + 1e-15
               for i in range(len(values) - 1))
    assert all(np.isfinite(values))


def test_toy_kkt_point():
    class ToyRF:
        def value(self, x):
            return float(x[0] ** 2)

        def gradient(self, x):
            return np.array([2.0 * x[0]])

    class ToyConstraint:
        def value(self, x):
            return float(x[0] - 1.0)

        def gradient(self, x):
            return np.array([1.0])

    gram = GramOperator.from_matrix(np.eye(1))
    res = augmented_lagrangian_solve(ToyRF(), ToyConstraint(), gram,
                                     ALParams(), TRState(), x0=np.zeros(1))
    assert res.converged
    assert abs(res.control[0] - 1.0) <= 1e-4
    assert abs(res.multiplier + 2.0) <= 1e-4


def test_zero_constraint_behaves_like_inner_solve():
    quad = Quadratic([[2.0, 0.0], [0.0, 5.0]], [1.0, 1.0])
    gram = GramOperator.from_matrix(quad.a)

    class ZeroConstraint:
        def value(self, x):
            return 0.0

        def gradient(self, x):
            return np.zeros(2)

    res = augmented_lagrangian_solve(quad, ZeroConstraint(), gram, ALParams(),
                                     TRState(), x0=np.zeros(2))
    assert res.multiplier == 0.0
    assert res.penalty == ALParams().mu0  # never grew
    assert np.linalg.norm(res.control - quad.minimizer()) <= 1e-6


def test_history_never_contains_nan_objective():
    class NaNBall:
        def value(self, x):
            if np.linalg.norm(x - 1.0) > 0.8:
                return float("nan")
            return float((x - 1.0) @ (x - 1.0))

        def gradient(self, x):
            return 2.0 * (x - 1.0)

    class Volumeish:
        def value(self, x):
            return float(x.sum() - 2.0)

        def gradient(self, x):
            return np.ones(2)

    gram = GramOperator.from_matrix(np.eye(2))
    res = augmented_lagrangian_solve(NaNBall(), Volumeish(), gram, ALParams(),
                                     TRState(radius=0.5),
                                     x0=np.array([1.0, 1.0]))
    assert all(np.isfinite(rec.objective) for rec in res.history)


def test_metric_scaling_leaves_boundary_iterates_unchanged():
    # G -> s G with the radius scaled by sqrt(s): identical accepted steps
    # while every step is radius-limited (tiny radius, distant minimizer)
    quad = Quadratic([[2.0, 0.3], [0.3, 1.0]], [8.0, -6.0])
    gmat = np.array([[1.5, 0.2], [0.2, 0.9]])
    s = 7.3

    def run(gram_matrix, radius):
        gram = GramOperator.from_matrix(gram_matrix)
        seq = []

        def cb(x, *args):
            seq.append(np.array(x))

        inner_solve(quad, np.zeros(2), gram,
                    TRState(radius=radius, radius_max=radius,
                            max_iterations=5),
                    omega=1e-14, callback=cb)
        return seq

    seq1 = run(gmat, 0.05)
    seq2 = run(s * gmat, math.sqrt(s) * 0.05)
    assert len(seq1) == len(seq2) > 0
    for a, b in zip(seq1, seq2):
        assert np.abs(a - b).max() <= 1e-12


def test_augmented_objective_assembles_terms():
    quad = Quadratic(np.eye(2), np.zeros(2))

    class C:
        def value(self, x):
            return float(x[0] - 2.0)

        def gradient(self, x):
            return np.array([1.0, 0.0])

    model = AugmentedObjective(quad, C(), multiplier=3.0, penalty=10.0)
    x = np.array([1.0, 1.0])
    cv = -1.0
    expected = quad.value(x) + 3.0 * cv + 5.0 * cv * cv
    assert model.value(x) == pytest.approx(expected)
    expected_grad = quad.gradient(x) + (3.0 + 10.0 * cv) * np.array([1.0, 0.0])
    assert np.allclose(model.gradient(x), expected_grad)
