"""Projected BFGS engine, the two expansion optimizers and the gradient audit."""

import math

import numpy as np
import pytest

from modegp import (
    KernelHyper,
    OptimizerConfig,
    gradient_audit,
    hypers_to_vector,
    joint_objective,
    minimize_box,
    nlml_gradient,
    nlml_value_and_gradient,
    optimize_cons_sogp,
    optimize_sogp,
    vector_to_hypers,
)

LOWER = np.array([-2.0, -2.0, -2.0])
UPPER = np.array([2.0, 2.0, 2.0])


def quadratic(center):
    center = np.asarray(center, dtype=float)

    def objective(x):
        diff = x - center
        return float(diff @ diff), 2.0 * diff, True

    return objective


class TestMinimizeBox:
    def test_converges_to_interior_minimum(self):
        run = minimize_box(quadratic([0.3, -0.7, 1.1]), np.zeros(3), LOWER, UPPER,
                           grad_tol=1e-8, step_tol=1e-10, max_iter=100)
        assert run.iterations < 50
        np.testing.assert_allclose(run.x, [0.3, -0.7, 1.1], atol=1e-6)
        assert run.termination == "gradient"

    def test_converges_to_box_projection(self):
        run = minimize_box(quadratic([5.0, -3.0, 0.5]), np.zeros(3), LOWER, UPPER,
                           grad_tol=1e-8, step_tol=1e-10, max_iter=100)
        np.testing.assert_allclose(run.x, [2.0, -2.0, 0.5], atol=1e-6)

    def test_monotone_descent_and_feasible_iterates(self):
        run = minimize_box(quadratic([1.9, 1.9, -1.9]), np.zeros(3), LOWER, UPPER,
                           grad_tol=1e-10, step_tol=1e-12, max_iter=200)
        values = [f for _, f, _ in run.trace]
        assert all(b <= a for a, b in zip(values, values[1:]))
        assert np.all(run.x >= LOWER) and np.all(run.x <= UPPER)

    def test_bit_for_bit_determinism(self):
        runs = [minimize_box(quadratic([0.3, -0.7, 1.1]), np.zeros(3), LOWER, UPPER,
                             grad_tol=1e-8, step_tol=1e-10, max_iter=100)
                for _ in range(2)]
        assert runs[0].trace == runs[1].trace
        np.testing.assert_array_equal(runs[0].x, runs[1].x)
        assert runs[0].objective == runs[1].objective

    def test_infeasible_start_reported(self):
        def dead(x):
            return 1e15, np.zeros_like(x), False

        run = minimize_box(dead, np.zeros(3), LOWER, UPPER,
                           grad_tol=1e-8, step_tol=1e-10, max_iter=100)
        assert run.termination == "infeasible"
        assert run.iterations == 0

    def test_pinned_coordinate_reports_outward_gradient(self):
        # linear pull pins x to the lower bound: raw gradient stays positive
        # there while the projected component reads 0
        def linear(x):
            return float(np.sum(x)), np.ones_like(x), True

        run = minimize_box(linear, np.zeros(3), LOWER, UPPER,
                           grad_tol=1e-8, step_tol=1e-12, max_iter=100)
        np.testing.assert_allclose(run.x, LOWER, atol=1e-12)
        assert np.all(run.gradient >= 0.0)
        np.testing.assert_array_equal(run.projected_gradient, 0.0)
        assert run.termination == "gradient"

    def test_max_iter_termination(self):
        run = minimize_box(quadratic([0.3, -0.7, 1.1]), np.zeros(3), LOWER, UPPER,
                           grad_tol=1e-16, step_tol=1e-16, max_iter=1)
        assert run.termination == "max-iter"
        assert run.iterations == 1


class TestOptimizerConfig:
    def test_defaults(self):
        sogp = OptimizerConfig.for_sogp()
        cons = OptimizerConfig.for_cons_sogp()
        assert sogp.grad_tol == 1e-7 and sogp.step_tol == 1e-7
        assert cons.grad_tol == 1e-10 and cons.step_tol == 1e-10
        assert sogp.max_iter == 500 and cons.lam == 1000.0

    def test_initial_point_must_be_interior(self):
        with pytest.raises(ValueError, match="inside the bounds"):
            OptimizerConfig(beta_init=0.02)
        with pytest.raises(ValueError, match="positive"):
            OptimizerConfig(grad_tol=0.0)


class TestOptimizeSogp:
    def test_paper_scenario_pins_upper_modes(self, paper_datasets):
        report = optimize_sogp(paper_datasets)
        assert report.method == "sogp"
        betas = report.betas
        assert np.sum(betas[2:] <= 0.03) >= 2
        assert report.feasible

    def test_interior_minimizer_gradient_is_small(self, paper_datasets):
        # mode 1 has a clean interior optimum
        report = optimize_sogp(paper_datasets)
        h = report.hypers[0]
        lo_b = math.exp(h.bounds[1][0])
        assert h.beta > 2 * lo_b  # interior in beta
        grad = nlml_gradient(paper_datasets[0], h)
        assert np.linalg.norm(grad) <= 1e-6

    def test_deterministic_reports(self, paper_datasets):
        a = optimize_sogp(paper_datasets)
        b = optimize_sogp(paper_datasets)
        assert [r.trace for r in a.runs] == [r.trace for r in b.runs]
        np.testing.assert_array_equal(a.betas, b.betas)

    def test_monotone_descent_each_mode(self, paper_datasets):
        report = optimize_sogp(paper_datasets)
        for run in report.runs:
            values = [f for _, f, _ in run.trace]
            assert all(b <= a for a, b in zip(values, values[1:]))
            assert values[-1] <= values[0]


class TestOptimizeConsSogp:
    def test_lambda_zero_matches_sogp(self, paper_bank, paper_datasets):
        sogp = optimize_sogp(paper_datasets)
        cons = optimize_cons_sogp(paper_bank, OptimizerConfig.for_cons_sogp(lam=0.0))
        delta = np.abs(hypers_to_vector(cons.hypers) - hypers_to_vector(sogp.hypers))
        assert np.max(delta) <= 1e-4

    def test_penalty_and_nlml_terms_balance(self, paper_bank):
        # lambda = 1000 keeps the two objective terms within a factor of 10
        report = optimize_cons_sogp(paper_bank)
        lam_pen = report.lam * report.penalty
        nlml_total = float(np.sum(report.nlml_per_mode))
        assert lam_pen > 0.0 and nlml_total > 0.0
        ratio = lam_pen / nlml_total
        assert 0.1 <= ratio <= 10.0

    def test_joint_run_dimensions_and_feasibility(self, paper_bank):
        report = optimize_cons_sogp(paper_bank)
        assert report.method == "cons-sogp"
        assert len(report.hypers) == paper_bank.n_modes
        assert len(report.runs) == 1
        run = report.runs[0]
        assert run.x.size == 2 * paper_bank.n_modes
        assert report.feasible
        assert run.objective <= run.trace[0][1]  # improved on the initial point

    def test_exact_objective_breakdown(self, paper_bank):
        report = optimize_cons_sogp(paper_bank)
        assert report.objective == report.lam * report.penalty + report.nlml_per_mode.sum()


class TestGradientAudit:
    def test_exact_on_quadratic(self):
        center = np.array([0.4, -1.0])

        def handle(x):
            diff = x - center
            return float(diff @ diff), 2.0 * diff

        assert gradient_audit(handle, np.array([1.0, 2.0])) <= 1e-9

    def test_nlml_gradients_pass(self, paper_datasets):
        rng = np.random.default_rng(20)
        (g_lo, g_hi), (b_lo, b_hi) = KernelHyper(0.0, 0.0).bounds
        worst = 0.0
        for data in paper_datasets:
            def handle(theta, data=data):
                return nlml_value_and_gradient(data, KernelHyper(theta[0], theta[1]))
            for _ in range(5):
                point = np.array([rng.uniform(g_lo + 0.05, g_hi - 0.05),
                                  rng.uniform(b_lo + 0.05, b_hi - 0.05)])
                worst = max(worst, gradient_audit(handle, point))
        assert worst <= 1e-5

    def test_joint_gradient_passes(self, paper_bank):
        rng = np.random.default_rng(21)
        (g_lo, g_hi), (b_lo, b_hi) = KernelHyper(0.0, 0.0).bounds

        def handle(theta):
            ev = joint_objective(paper_bank.with_hypers(vector_to_hypers(theta)))
            return ev.total, ev.gradient

        worst = 0.0
        for _ in range(5):
            point = np.empty(10)
            point[0::2] = rng.uniform(g_lo + 0.05, g_hi - 0.05, size=5)
            point[1::2] = rng.uniform(b_lo + 0.05, b_hi - 0.05, size=5)
            worst = max(worst, gradient_audit(handle, point))
        assert worst <= 1e-4

    def test_detects_corrupted_gradient(self, paper_datasets):
        data = paper_datasets[0]

        def corrupted(theta):
            value, grad = nlml_value_and_gradient(data, KernelHyper(theta[0], theta[1]))
            grad = grad.copy()
            grad[0] *= 1.01
            return value, grad

        point = np.array([math.log(1.0), math.log(0.1)])
        assert gradient_audit(corrupted, point) > 1e-3
