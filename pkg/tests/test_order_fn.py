"""Order models: range, degeneracy, differentiability, and serialization."""

import math

import numpy as np
import pytest

from vofde import autodiff as ad
from vofde.autodiff import ParamStore, Tensor
from vofde.errors import ConfigError, DomainError, ShapeError
from vofde.order_fn import (
    ORDER_FLOOR,
    ConstantOrder,
    GridInterpOrder,
    StateNetOrder,
    TimeNetOrder,
    eval_order,
    inverse_squash,
    load_order_model,
    make_order_model,
    order_trace,
    save_order_model,
    sinusoidal_embed,
)
from vofde.solvers import Scheme, SolverConfig, linear_rhs, solve


class TestSinusoidalEmbed:
    def test_at_zero(self):
        assert sinusoidal_embed(0.0, 4, 10.0).tolist() == [0.0, 1.0, 0.0, 1.0]

    def test_unit_wavelength(self):
        out = sinusoidal_embed(1.0, 2, 1.0)
        assert out[0] == pytest.approx(math.sin(1.0), rel=1e-15)
        assert out[1] == pytest.approx(math.cos(1.0), rel=1e-15)
        assert out[0] == pytest.approx(0.8414709848, abs=1e-10)
        assert out[1] == pytest.approx(0.5403023059, abs=1e-10)

    def test_bounded(self):
        rng = np.random.default_rng(0)
        for t in rng.uniform(-30.0, 30.0, 200):
            assert np.max(np.abs(sinusoidal_embed(float(t), 8, 10.0))) <= 1.0

    def test_odd_dim_rejected(self):
        with pytest.raises(ShapeError):
            sinusoidal_embed(1.0, 3, 10.0)


class TestConstantOrder:
    def test_ignores_time_and_state(self):
        model = ConstantOrder(0.8)
        assert eval_order(model, 0.0) == 0.8
        assert eval_order(model, 5.0, Tensor(np.ones(7))) == 0.8

    def test_integer_order(self):
        assert eval_order(ConstantOrder(1.0), 2.0) == 1.0

    def test_out_of_range(self):
        with pytest.raises(DomainError):
            ConstantOrder(1.2)
        with pytest.raises(DomainError):
            ConstantOrder(0.0)


class TestGridInterpOrder:
    def test_flat_knots_give_flat_order(self):
        store = ParamStore()
        model = GridInterpOrder(store, "o", 0.0, 1.0, n_knots=5, init=0.8)
        for t in np.linspace(0.0, 1.0, 13):
            assert eval_order(model, float(t)) == pytest.approx(0.8, abs=1e-12)

    def test_initialization_is_exact_to_1e9(self):
        store = ParamStore()
        model = GridInterpOrder(store, "o", 0.0, 1.0, init=0.8)
        assert abs(eval_order(model, 0.0) - 0.8) <= 1e-9

    def test_monotone_knots_give_monotone_trace(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            store = ParamStore()
            model = GridInterpOrder(store, "o", 0.0, 1.0, n_knots=6)
            raw = np.sort(rng.uniform(-2.0, 2.0, 6))
            store.set("o.knots", raw)
            ts = np.linspace(0.0, 1.0, 37)
            vals = [eval_order(model, float(t)) for t in ts]
            assert np.all(np.diff(vals) >= -1e-15)

    def test_clamps_outside_span(self):
        store = ParamStore()
        model = GridInterpOrder(store, "o", 0.0, 1.0, n_knots=3)
        store.set("o.knots", np.array([-1.0, 0.0, 2.0]))
        assert eval_order(model, -5.0) == eval_order(model, 0.0)
        assert eval_order(model, 7.0) == eval_order(model, 1.0)


class TestNetOrders:
    def test_statenet_all_zero_parameters(self):
        store = ParamStore()
        rng = np.random.default_rng(0)
        model = StateNetOrder(store, "o", state_dim=3, t_max=1.0, rng=rng, embed_dim=4)
        for name in store.names():
            store.set(name, np.zeros_like(store.get(name)))
        got = eval_order(model, 0.3, Tensor([0.1, -0.2, 0.5]))
        expected = ORDER_FLOOR + 0.5 * (1.0 - ORDER_FLOOR)
        assert got == pytest.approx(expected, rel=1e-12)
        assert got == pytest.approx(0.5005, abs=1e-6)

    def test_head_initialization_pins_value(self):
        store = ParamStore()
        model = TimeNetOrder(store, "o", t_max=2.0, rng=np.random.default_rng(3), init=0.8)
        for t in (0.0, 0.7, 2.0):
            assert eval_order(model, t) == pytest.approx(0.8, abs=1e-12)

    def test_statenet_requires_state(self):
        store = ParamStore()
        model = StateNetOrder(store, "o", state_dim=2, t_max=1.0,
                              rng=np.random.default_rng(0))
        with pytest.raises(ShapeError):
            model.eval_order(0.1, None)

    def test_statenet_pooling_matrix_state(self):
        store = ParamStore()
        model = StateNetOrder(store, "o", state_dim=2, t_max=1.0,
                              rng=np.random.default_rng(0), pool_rows=3)
        flat = Tensor(np.arange(6.0))
        val = eval_order(model, 0.5, flat)
        assert ORDER_FLOOR <= val <= 1.0


class TestRangeInvariant:
    def test_never_leaves_unit_interval(self):
        rng = np.random.default_rng(42)
        store = ParamStore()
        models = [
            ConstantOrder(0.3),
            GridInterpOrder(store, "g", 0.0, 1.0),
            TimeNetOrder(store, "t", t_max=1.0, rng=rng, embed_dim=4, hidden=8),
            StateNetOrder(store, "s", state_dim=3, t_max=1.0, rng=rng, embed_dim=4, hidden=8),
        ]
        for _ in range(2500):
            for name in store.names():
                store.set(name, rng.uniform(-30.0, 30.0, store.get(name).shape))
            t = float(rng.uniform(0.0, 1.0))
            x = Tensor(rng.uniform(-50.0, 50.0, 3))
            for model in models:
                val = eval_order(model, t, x)
                assert ORDER_FLOOR <= val <= 1.0


class TestDegeneracy:
    def test_constant_one_matches_hardcoded_unit_order(self):
        class HardcodedOne:
            def eval_order(self, t, x=None, leaves=None):
                return Tensor(1.0)

        cfg = SolverConfig(0.0, 1.0, 50, Scheme.ABM_P)
        a = solve(linear_rhs(0.7), ConstantOrder(1.0), [1.0], cfg)
        b = solve(linear_rhs(0.7), HardcodedOne(), [1.0], cfg)
        assert np.array_equal(a.states, b.states)


class TestDifferentiability:
    @pytest.mark.parametrize("kind", ["grid", "timenet", "statenet"])
    def test_gradients_match_central_differences(self, kind):
        rng = np.random.default_rng(5)
        store = ParamStore()
        model = make_order_model(f"{kind}:0.7", store, 0.0, 1.0, rng, state_dim=3)
        for name in store.names():
            store.set(name, rng.uniform(-0.5, 0.5, store.get(name).shape))
        x = np.array([0.4, -0.2, 0.9])

        def loss_fn(leaves, tape):
            return model.eval_order(0.37, Tensor(x), leaves)

        rel, _ = ad.grad_check(loss_fn, store)
        assert rel <= 1e-4


class TestOrderTrace:
    def test_constant_trace_is_flat(self):
        cfg = SolverConfig(0.0, 1.0, 10, Scheme.ABM_P)
        traj = solve(linear_rhs(-1.0), ConstantOrder(0.8), [1.0], cfg)
        trace = order_trace(ConstantOrder(0.8), traj)
        assert trace.shape == (11, 2)
        assert np.all(trace[:, 1] == 0.8)
        assert np.array_equal(trace[:, 0], traj.times)

    def test_trace_matches_solver_orders(self):
        store = ParamStore()
        model = GridInterpOrder(store, "o", 0.0, 1.0)
        store.set("o.knots", np.linspace(-1.0, 1.5, 11))
        cfg = SolverConfig(0.0, 1.0, 12, Scheme.ABM_P)
        traj = solve(linear_rhs(-0.5), model, [1.0], cfg)
        trace = order_trace(model, traj)
        assert np.allclose(trace[:, 1], traj.orders, atol=0.0)


class TestSerialization:
    @pytest.mark.parametrize("kind", ["const:0.7", "grid:0.6", "timenet:0.8", "statenet:0.5"])
    def test_round_trip(self, tmp_path, kind):
        rng = np.random.default_rng(8)
        store = ParamStore()
        model = make_order_model(kind, store, 0.0, 2.0, rng, state_dim=2)
        for name in store.names():
            store.set(name, rng.uniform(-1.0, 1.0, store.get(name).shape))
        path = tmp_path / "order.json"
        save_order_model(model, store, path)
        loaded, loaded_store = load_order_model(path)
        x = Tensor([0.3, -0.8])
        for t in (0.0, 0.9, 2.0):
            a = float(model.eval_order(t, x, store.bind(None)).data)
            b = float(loaded.eval_order(t, x, loaded_store.bind(None)).data)
            assert a == b

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            make_order_model("spline:0.5", ParamStore(), 0.0, 1.0, np.random.default_rng(0))

    def test_statenet_needs_state_dim(self):
        with pytest.raises(ConfigError):
            make_order_model("statenet", ParamStore(), 0.0, 1.0, np.random.default_rng(0))


def test_inverse_squash_round_trip():
    for alpha in (0.05, 0.3, 0.8, 0.999):
        raw = inverse_squash(alpha)
        sig = 1.0 / (1.0 + math.exp(-raw))
        assert ORDER_FLOOR + (1.0 - ORDER_FLOOR) * sig == pytest.approx(alpha, abs=1e-12)
