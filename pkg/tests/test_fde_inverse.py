"""Residual modes and the logistic training loop."""

import math

import numpy as np
import pytest

from vofde import autodiff as ad
from vofde.autodiff import ParamStore, Tensor
from vofde.errors import ConfigError, DomainError
from vofde.fde_inverse import (
    VP_U0,
    LossReport,
    MultiTermProblem,
    PowerSeriesModel,
    VpSetup,
    equation_residual,
    train_vp,
    train_vp_with_state,
    vp_network_residual,
    vp_rhs,
    zeta_k,
)
from vofde.frac_core import caputo_power_term
from vofde.order_fn import ConstantOrder
from vofde.solvers import Scheme, SolverConfig, solve_abm_predictor

SQRT_PI = 1.7724538509055160273


def make_series(coeffs, u0=0.0, r=5):
    store = ParamStore()
    series = PowerSeriesModel(store, "series", u0=u0, r=r)
    padded = np.zeros(r + 1)
    padded[: len(coeffs)] = coeffs
    series.set_coeffs(padded)
    return series, store


class TestZetaK:
    def test_zero_coefficients(self):
        series, _ = make_series([0.0])
        assert float(zeta_k(series, ConstantOrder(0.5), 0.3).data) == 0.0

    def test_classical_derivative_of_t(self):
        series, _ = make_series([0.0, 1.0])
        for t in (0.2, 1.0, 1.7):
            assert float(zeta_k(series, ConstantOrder(1.0), t).data) == pytest.approx(1.0, rel=1e-12)

    def test_half_order_square(self):
        series, _ = make_series([0.0, 0.0, 1.0])
        got = float(zeta_k(series, ConstantOrder(0.5), 1.0).data)
        assert got == pytest.approx(2.0 / math.gamma(2.5), rel=1e-12)
        assert got == pytest.approx(1.5045055561, abs=1e-9)

    def test_constant_term_ignored(self):
        with_const, _ = make_series([7.0, 1.0])
        without_const, _ = make_series([0.0, 1.0])
        a = float(zeta_k(with_const, ConstantOrder(0.6), 0.8).data)
        b = float(zeta_k(without_const, ConstantOrder(0.6), 0.8).data)
        assert a == b

    def test_domain(self):
        series, _ = make_series([0.0, 1.0])
        with pytest.raises(DomainError):
            zeta_k(series, ConstantOrder(0.5), 0.0)

    def test_matches_power_term_closed_form(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            i = int(rng.integers(1, 6))
            alpha = float(rng.uniform(0.05, 1.0))
            t = float(rng.uniform(0.1, 1.5))
            coeffs = np.zeros(6)
            coeffs[i] = 1.0
            series, _ = make_series(coeffs)
            got = float(zeta_k(series, ConstantOrder(alpha), t).data)
            assert got == pytest.approx(caputo_power_term(i, alpha, t), rel=1e-11)


class TestEquationResidual:
    def test_homogeneous_trivial_solution(self):
        series, _ = make_series([0.0])
        problem = MultiTermProblem(
            m=0, q_funcs=[lambda t: 1.0], orders=[ConstantOrder(0.5)],
            h_rhs=lambda t, u: 0.0, t_grid=np.linspace(0.1, 1.0, 10),
        )
        assert float(equation_residual(problem, series).data) == 0.0

    def test_classical_linear_solution(self):
        c = 0.37
        series, _ = make_series([0.0, c], u0=2.0)
        problem = MultiTermProblem(
            m=0, q_funcs=[lambda t: 1.0], orders=[ConstantOrder(1.0)],
            h_rhs=lambda t, u: c, t_grid=np.linspace(0.1, 1.0, 10),
        )
        assert float(equation_residual(problem, series).data) == pytest.approx(0.0, abs=1e-24)

    def test_manufactured_half_order(self):
        series, _ = make_series([0.0, 1.0])
        problem = MultiTermProblem(
            m=0, q_funcs=[lambda t: 1.0], orders=[ConstantOrder(0.5)],
            h_rhs=lambda t, u: 2.0 / SQRT_PI * t**0.5,
            t_grid=np.linspace(0.1, 1.0, 10),
        )
        assert float(equation_residual(problem, series).data) <= 1e-12

    def test_manufactured_solutions_property(self):
        # forcing assembled from the power-term closed form must zero the residual
        rng = np.random.default_rng(11)
        for _ in range(20):
            i = int(rng.integers(1, 6))
            alpha = float(rng.uniform(0.05, 1.0))
            a_i = float(rng.uniform(-2.0, 2.0))
            coeffs = np.zeros(6)
            coeffs[i] = a_i
            series, _ = make_series(coeffs)
            grid = np.sort(rng.uniform(0.05, 2.0, int(rng.integers(3, 12))))
            grid = np.unique(grid)
            problem = MultiTermProblem(
                m=0, q_funcs=[lambda t: 1.0], orders=[ConstantOrder(alpha)],
                h_rhs=lambda t, u, i=i, alpha=alpha, a_i=a_i:
                    a_i * caputo_power_term(i, alpha, t),
                t_grid=grid,
            )
            assert float(equation_residual(problem, series).data) <= 1e-18

    def test_two_term_problem(self):
        # D^1 u + D^0.5 u = h with u = t: h = 1 + t^0.5/Gamma(1.5)
        series, _ = make_series([0.0, 1.0])
        problem = MultiTermProblem(
            m=1, q_funcs=[lambda t: 1.0, lambda t: 1.0],
            orders=[ConstantOrder(1.0), ConstantOrder(0.5)],
            h_rhs=lambda t, u: 1.0 + t**0.5 / math.gamma(1.5),
            t_grid=np.linspace(0.2, 1.0, 5),
        )
        assert float(equation_residual(problem, series).data) <= 1e-20

    def test_list_length_validation(self):
        with pytest.raises(ConfigError):
            MultiTermProblem(m=1, q_funcs=[lambda t: 1.0], orders=[ConstantOrder(0.5)],
                             h_rhs=lambda t, u: 0.0, t_grid=np.array([0.5]))

    def test_differentiable_in_coefficients_and_order(self):
        rng = np.random.default_rng(3)
        store = ParamStore()
        series = PowerSeriesModel(store, "series", u0=0.1)
        series.set_coeffs(rng.uniform(-0.5, 0.5, 6))
        from vofde.order_fn import GridInterpOrder

        order = GridInterpOrder(store, "order", 0.0, 1.0, n_knots=5, init=0.6)
        problem = MultiTermProblem(
            m=0, q_funcs=[lambda t: 1.0], orders=[order],
            h_rhs=lambda t, u: 0.3 * u, t_grid=np.linspace(0.1, 1.0, 6),
        )

        def loss_fn(leaves, tape):
            return equation_residual(problem, series, leaves)

        rel, _ = ad.grad_check(loss_fn, store)
        assert rel <= 1e-4


class TestVpRhs:
    def test_fixed_points(self):
        assert vp_rhs(0.0) == 0.0
        assert vp_rhs(1.0) == 0.0

    def test_initial_value_rate(self):
        assert vp_rhs(0.1) == pytest.approx(0.027, rel=1e-12)

    def test_tensor_input(self):
        out = vp_rhs(Tensor([0.1, 0.5]))
        assert np.allclose(out.data, [0.027, 0.075])


class TestVpNetworkResidual:
    def test_perfect_fit_gives_zero(self):
        cfg = SolverConfig(0.0, 1.0, 10, Scheme.ABM_P)
        traj = solve_abm_predictor(lambda t, x: vp_rhs(x), ConstantOrder(0.8), [VP_U0], cfg)
        l_eqn, l_ini = vp_network_residual(Tensor(traj.states[:, 0]), ConstantOrder(0.8), cfg)
        assert float(l_eqn.data) == 0.0
        assert float(l_ini.data) == 0.0

    def test_constant_guess_against_hand_euler(self):
        # alpha = 1 makes every solver value a plain Euler recursion value
        n = 10
        cfg = SolverConfig(0.0, 1.0, n, Scheme.ABM_P)
        euler = [VP_U0]
        for _ in range(n):
            u = euler[-1]
            euler.append(u + (1.0 / n) * (0.3 * u - 0.3 * u * u))
        expected = sum((VP_U0 - v) ** 2 for v in euler[1:])
        l_eqn, l_ini = vp_network_residual(
            Tensor(np.full(n + 1, VP_U0)), ConstantOrder(1.0), cfg)
        assert float(l_eqn.data) == pytest.approx(expected, rel=1e-10)
        assert float(l_ini.data) == 0.0

    def test_total_loss_decomposition_is_exact(self):
        reports = train_vp(iterations=5, j_points=6, seed=1)
        for r in reports:
            assert r.l_total == 1.0 * r.l_eqn + 1.0 * r.l_ini

    def test_decomposition_with_nonunit_weights(self):
        reports = train_vp(iterations=5, j_points=6, seed=1, lambda1=0.7, lambda2=2.5)
        for r in reports:
            assert r.l_total == 0.7 * r.l_eqn + 2.5 * r.l_ini

    def test_gradients_through_both_parameter_groups(self):
        setup = VpSetup(j_points=8, seed=0)

        def loss_fn(leaves, tape):
            l_eqn, _ = setup.train_losses(leaves)
            return l_eqn

        rel, _ = ad.grad_check(loss_fn, setup.store)
        assert rel <= 1e-4


class TestTrainVp:
    def test_short_run_converges(self):
        reports = train_vp(iterations=200, j_points=10, seed=0)
        assert reports[-1].iteration == 200
        assert reports[-1].l_total <= 1e-2

    def test_checkpoint_iterations(self):
        reports = train_vp(iterations=600, j_points=5, seed=2)
        assert [r.iteration for r in reports] == [200, 500, 600]
        assert all(isinstance(r, LossReport) for r in reports)

    def test_alpha_trace_shape(self):
        reports = train_vp(iterations=30, j_points=7, seed=0)
        trace = reports[-1].learned_alpha_trace
        assert trace.shape == (8, 2)
        assert np.all((trace[:, 1] > 0.0) & (trace[:, 1] <= 1.0))

    def test_invalid_grid_rejected(self):
        with pytest.raises(ConfigError):
            train_vp(iterations=10, j_points=0, seed=0)
        with pytest.raises(ConfigError):
            train_vp(iterations=0, j_points=10, seed=0)

    def test_determinism(self):
        a = train_vp(iterations=40, j_points=6, seed=9)
        b = train_vp(iterations=40, j_points=6, seed=9)
        assert [r.l_total for r in a] == [r.l_total for r in b]

    def test_generalization_within_10x_of_train(self):
        reports, setup = train_vp_with_state(iterations=300, j_points=10, seed=4)
        l_eqn_tr, l_ini_tr = setup.train_losses(setup.store.bind(None))
        train_total = float(l_eqn_tr.data) + float(l_ini_tr.data)
        assert reports[-1].l_total <= 10.0 * max(train_total, 1e-12)

    def test_timenet_order_variant(self):
        reports = train_vp(iterations=40, j_points=6, seed=0, order_kind="timenet")
        assert np.isfinite(reports[-1].l_total)
