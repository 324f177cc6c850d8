"""Tests for parametric curve evaluation, fitting, and inversion.

Expected values marked as derived were computed through independent routes
(closed forms, brute-force grids) before being frozen here.
"""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dataplan.curves import (
    UNREACHABLE,
    CurveFamily,
    CurveSample,
    DomainError,
    FitConfig,
    NonMonotoneWarning,
    RegressionModel,
    RegressionSet,
    default_weights,
    eval_curve,
    fit_curve,
    invert_curve,
)


def power_model(theta):
    return RegressionModel(CurveFamily.power_law(), np.asarray(theta, dtype=float))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


class TestEval:
    def test_power_law_sqrt(self):
        assert eval_curve(power_model([10.0, 0.5, 0.0]), 100.0) == pytest.approx(100.0)

    def test_power_law_zero_coefficient_leaves_bias(self):
        for exponent in (0.5, 2.0, -1.0):
            model = power_model([0.0, exponent, 42.0])
            assert eval_curve(model, 7.0) == pytest.approx(42.0)

    def test_additive_two_source(self):
        # sqrt(4) + sqrt(9) = 5, computed independently
        model = RegressionModel(
            CurveFamily.additive_power_law(2), np.array([1.0, 0.5, 1.0, 0.5, 0.0])
        )
        assert eval_curve(model, (4.0, 9.0)) == pytest.approx(5.0)

    def test_logarithmic_matches_formula(self):
        model = RegressionModel(CurveFamily.logarithmic(), np.array([8.0, 1.0, 2.0]))
        assert eval_curve(model, 9.0) == pytest.approx(8.0 * math.log(10.0) + 2.0)

    def test_logarithmic_domain_error(self):
        model = RegressionModel(CurveFamily.logarithmic(), np.array([1.0, -5.0, 0.0]))
        with pytest.raises(DomainError):
            eval_curve(model, 2.0)

    def test_power_zero_to_negative_domain_error(self):
        model = power_model([1.0, -1.0, 0.0])
        with pytest.raises(DomainError):
            eval_curve(model, 0.0)

    def test_arctan_matches_formula(self):
        theta = np.array([0.3, -0.7, 11.0])
        model = RegressionModel(CurveFamily.arctan(), theta)
        q = 4.0
        expected = (200.0 / math.pi) * math.atan(0.3 * (math.pi / 2.0) * q - 0.7) + 11.0
        assert eval_curve(model, q) == pytest.approx(expected, rel=1e-12)

    def test_algebraic_root_matches_formula(self):
        theta = np.array([0.02, 1.5, 3.0])
        model = RegressionModel(CurveFamily.algebraic_root(), theta)
        q = 70.0
        t = abs(theta[0] * q)
        expected = 100.0 * q / (1.0 + t ** theta[1]) ** (1.0 / theta[1]) + theta[2]
        assert eval_curve(model, q) == pytest.approx(expected, rel=1e-12)

    def test_algebraic_root_saturates(self):
        # limit for q -> inf is 100/|theta0| + theta2
        model = RegressionModel(CurveFamily.algebraic_root(), np.array([0.5, 2.0, 1.0]))
        assert eval_curve(model, 1e12) == pytest.approx(100.0 / 0.5 + 1.0, rel=1e-6)

    def test_theta_length_validated(self):
        with pytest.raises(ValueError):
            RegressionModel(CurveFamily.power_law(), np.array([1.0, 2.0]))


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


class TestTypes:
    def test_sample_rejects_negative_size(self):
        with pytest.raises(ValueError):
            CurveSample(np.array([-1.0]), 5.0)

    def test_sample_rejects_nonpositive_weight(self):
        with pytest.raises(ValueError):
            CurveSample(np.array([1.0]), 5.0, weight=0.0)

    def test_set_requires_positive_total_size(self):
        with pytest.raises(ValueError):
            RegressionSet.from_points([0.0, 0.0], [1.0, 2.0])

    def test_set_rejects_mixed_source_counts(self):
        samples = (CurveSample(np.array([1.0]), 1.0), CurveSample(np.array([1.0, 2.0]), 1.0))
        with pytest.raises(ValueError):
            RegressionSet(samples, 1)


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------


class TestWeights:
    def test_doubling_ratio_exact(self):
        data = RegressionSet.from_points([10.0, 20.0, 30.0, 40.0], [1.0, 2.0, 3.0, 4.0])
        w = default_weights(data)
        ordered = np.sort(w)
        assert np.all(ordered[1:] / ordered[:-1] == 2.0)
        assert w.sum() == pytest.approx(1.0)

    def test_weights_follow_size_order_not_input_order(self):
        data = RegressionSet.from_points([30.0, 10.0, 20.0], [3.0, 1.0, 2.0])
        w = default_weights(data)
        # largest size (index 0) gets the largest weight
        assert w[0] > w[2] > w[1]

    @given(
        st.lists(
            st.floats(min_value=0.5, max_value=1e6, allow_nan=False), min_size=2, max_size=40
        )
    )
    def test_doubling_ratio_exact_property(self, sizes):
        data = RegressionSet.from_points(sizes, np.zeros(len(sizes)))
        ordered = np.sort(default_weights(data))
        assert np.all(ordered[1:] / ordered[:-1] == 2.0)

    def test_no_overflow_on_long_sets(self):
        n = 500
        data = RegressionSet.from_points(np.arange(1.0, n + 1.0), np.zeros(n))
        w = default_weights(data)
        assert np.all(np.isfinite(w))
        assert w.sum() == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


class TestFit:
    def test_noiseless_power_law_recovery(self):
        sizes = np.arange(100.0, 1001.0, 100.0)
        theta_true = np.array([50.0, 0.3, 5.0])
        scores = theta_true[0] * sizes ** theta_true[1] + theta_true[2]
        model = fit_curve(CurveFamily.power_law(), RegressionSet.from_points(sizes, scores))
        assert model.converged
        np.testing.assert_allclose(model.theta, theta_true, atol=1e-4)

    def test_single_repeated_sample_interpolates(self):
        data = RegressionSet.from_points([10.0, 10.0, 10.0], [20.0, 20.0, 20.0])
        model = fit_curve(CurveFamily.power_law(), data)
        assert abs(eval_curve(model, 10.0) - 20.0) <= 1e-9

    def test_noiseless_logarithmic_score_match(self):
        theta_true = np.array([8.0, 1.0, 2.0])
        sizes = np.arange(10.0, 101.0, 10.0)
        scores = theta_true[0] * np.log(sizes + theta_true[1]) + theta_true[2]
        model = fit_curve(CurveFamily.logarithmic(), RegressionSet.from_points(sizes, scores))
        predicted = np.array([eval_curve(model, s) for s in sizes])
        np.testing.assert_allclose(predicted, scores, atol=1e-3)

    def test_noiseless_additive_score_match(self):
        rng = np.random.default_rng(7)
        points = rng.uniform(10.0, 1000.0, size=(30, 2))
        theta_true = np.array([2.0, 0.4, 3.0, 0.3, 1.0])
        scores = (
            theta_true[0] * points[:, 0] ** theta_true[1]
            + theta_true[2] * points[:, 1] ** theta_true[3]
            + theta_true[4]
        )
        data = RegressionSet(
            tuple(CurveSample(points[i], scores[i]) for i in range(30)), 2
        )
        # scattered 2-source data needs a longer leash than the default cap
        model = fit_curve(
            CurveFamily.additive_power_law(2), data, config=FitConfig(max_iterations=1000)
        )
        predicted = np.array([eval_curve(model, points[i]) for i in range(30)])
        np.testing.assert_allclose(predicted, scores, atol=1e-6)

    def test_bitwise_determinism(self):
        sizes = np.linspace(50.0, 500.0, 12)
        scores = 12.0 * np.log(sizes + 1.0) + 3.0
        data = RegressionSet.from_points(sizes, scores)
        a = fit_curve(CurveFamily.power_law(), data)
        b = fit_curve(CurveFamily.power_law(), data)
        assert np.array_equal(a.theta, b.theta)
        assert a.converged == b.converged

    def test_first_order_optimality(self):
        # central-difference gradient of the weighted loss is ~0 at the optimum
        sizes = np.arange(100.0, 1001.0, 100.0)
        scores = 50.0 * sizes ** 0.3 + 5.0
        data = RegressionSet.from_points(sizes, scores)
        model = fit_curve(CurveFamily.power_law(), data)
        w = default_weights(data)

        def loss(theta):
            pred = theta[0] * sizes ** theta[1] + theta[2]
            return float(np.sum(w * (scores - pred) ** 2))

        grad = np.empty(3)
        for j in range(3):
            h = 1e-6 * max(1.0, abs(model.theta[j]))
            up = model.theta.copy()
            down = model.theta.copy()
            up[j] += h
            down[j] -= h
            grad[j] = (loss(up) - loss(down)) / (2.0 * h)
        assert np.linalg.norm(grad) <= 1e-4

    def test_explicit_weights_respected(self):
        # all weight on one point forces interpolation of that point
        data = RegressionSet.from_points(
            [10.0, 100.0], [5.0, 30.0], weights=[1e-12, 1.0]
        )
        model = fit_curve(CurveFamily.power_law(), data)
        assert abs(eval_curve(model, 100.0) - 30.0) <= 1e-6

    def test_misspecified_fit_returns_best_so_far(self):
        sizes = np.linspace(50.0, 500.0, 12)
        scores = 12.0 * np.log(sizes + 1.0) + 3.0
        data = RegressionSet.from_points(sizes, scores)
        model = fit_curve(CurveFamily.power_law(), data)
        # the power family cannot stall on log data; best-so-far must still
        # track the heavily weighted large-size points closely
        predicted = np.array([eval_curve(model, s) for s in sizes])
        assert np.abs(predicted - scores)[6:].max() < 0.5


# ---------------------------------------------------------------------------
# Inversion
# ---------------------------------------------------------------------------


class TestInvert:
    def test_power_closed_form(self):
        result = invert_curve(power_model([1.0, 0.5, 0.0]), 10.0, q_max=1e9)
        np.testing.assert_allclose(result, [100.0], rtol=1e-12)

    def test_power_closed_form_with_bias(self):
        # q = ((target - theta2)/theta0)^(1/theta1) = ((90-40)/2)^2 = 625
        result = invert_curve(power_model([2.0, 0.5, 40.0]), 90.0, q_max=1e9)
        np.testing.assert_allclose(result, [625.0], rtol=1e-12)

    def test_target_already_met_at_zero(self):
        result = invert_curve(power_model([1.0, 0.5, 50.0]), 45.0, q_max=1e9)
        np.testing.assert_allclose(result, [0.0])

    def test_arctan_bounded_range_unreachable(self):
        model = RegressionModel(CurveFamily.arctan(), np.array([1.0, 0.0, 10.0]))
        # the arctan family saturates at theta2 + 100
        assert invert_curve(model, 111.0, q_max=1e12) is UNREACHABLE

    def test_beyond_q_max_unreachable(self):
        assert invert_curve(power_model([1.0, 0.5, 0.0]), 10.0, q_max=50.0) is UNREACHABLE

    def test_logarithmic_bisection(self):
        model = RegressionModel(CurveFamily.logarithmic(), np.array([8.0, 1.0, 2.0]))
        result = invert_curve(model, 30.0, q_max=1e9)
        # closed form: q = exp((30-2)/8) - 1
        expected = math.exp(28.0 / 8.0) - 1.0
        np.testing.assert_allclose(result, [expected], rtol=1e-7)

    def test_additive_two_source_symmetric(self):
        # brute-force grid over [0,20]^2 at step 0.01: argmin (4.00, 4.00), cost 8.00
        model = RegressionModel(
            CurveFamily.additive_power_law(2), np.array([1.0, 0.5, 1.0, 0.5, 0.0])
        )
        result = invert_curve(
            model, 4.0, costs=np.array([1.0, 1.0]), q_max=20.0, seed=0
        )
        assert result is not UNREACHABLE
        cost = float(np.sum(result))
        assert cost == pytest.approx(8.0, abs=0.02)
        np.testing.assert_allclose(result, [4.0, 4.0], atol=0.05)
        assert eval_curve(model, result) >= 4.0 - 1e-9

    def test_additive_asymmetric_costs_match_grid_oracle(self):
        model = RegressionModel(
            CurveFamily.additive_power_law(2), np.array([1.0, 0.5, 1.0, 0.5, 0.0])
        )
        costs = np.array([1.0, 4.0])
        result = invert_curve(model, 4.0, costs=costs, q_max=30.0, seed=0)
        # grid oracle at step 0.005 over [0,30]^2, computed independently:
        # minimize q1 + 4 q2 s.t. sqrt(q1)+sqrt(q2) >= 4
        step = 0.005
        axis = np.arange(0.0, 30.0 + step / 2, step)
        value = np.add.outer(np.sqrt(axis), np.sqrt(axis))
        cost_grid = np.add.outer(axis, 4.0 * axis)
        cost_grid[value < 4.0] = np.inf
        oracle_cost = cost_grid.min()
        assert float(costs @ result) == pytest.approx(oracle_cost, abs=0.05)

    def test_non_monotone_fit_warns(self):
        with pytest.warns(NonMonotoneWarning):
            result = invert_curve(power_model([-2.0, 0.5, 10.0]), 50.0, q_max=1e6)
        assert result is UNREACHABLE

    def test_unreachable_singleton_repr(self):
        assert repr(UNREACHABLE) == "UNREACHABLE"

    @given(
        theta0=st.floats(min_value=0.1, max_value=20.0),
        theta1=st.floats(min_value=0.1, max_value=0.9),
        theta2=st.floats(min_value=-10.0, max_value=10.0),
        frac=st.floats(min_value=0.05, max_value=0.95),
    )
    @settings(max_examples=50, deadline=None)
    def test_round_trip_reaches_target(self, theta0, theta1, theta2, frac):
        model = power_model([theta0, theta1, theta2])
        top = eval_curve(model, 1e6)
        bottom = eval_curve(model, 0.0)
        target = bottom + frac * (top - bottom)
        result = invert_curve(model, target, q_max=1e6)
        assert result is not UNREACHABLE
        assert eval_curve(model, result) >= target - 1e-6


class TestFamilyValidation:
    def test_multi_source_requires_additive(self):
        with pytest.raises(ValueError):
            CurveFamily("power-law", 2)

    def test_parameter_counts(self):
        assert CurveFamily.power_law().parameter_count == 3
        assert CurveFamily.additive_power_law(2).parameter_count == 5
        assert CurveFamily.additive_power_law(3).parameter_count == 7
