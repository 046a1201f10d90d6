"""Bindings must return exactly the engine numbers the CLI writes."""

import subprocess
import sys

import numpy as np
import pytest

import vofde_bindings as vb
from vofde_bindings import ConfigError, DivergenceError


def run_cli(args, cwd):
    proc = subprocess.run([sys.executable, "-m", "vofde", *args],
                          capture_output=True, text=True, cwd=cwd)
    assert proc.returncode == 0, proc.stderr
    return proc


def fmt17(x):
    return "%.17g" % float(x)


class TestSolveParity:
    def test_bitwise_equal_to_cli_trajectory(self, tmp_path):
        run_cli(["solve", "--out", str(tmp_path), "--set", "scheme=ABM_P",
                 "--set", "rhs=linear:-1.0", "--set", "order=const:0.5",
                 "--set", "steps=2000"], cwd=tmp_path)
        times, states, orders = vb.solve("ABM_P", "linear:-1.0", "const:0.5",
                                         [1.0], 0.0, 1.0, 2000)
        lines = [f"t,alpha,x_0"]
        for i in range(times.size):
            lines.append(",".join([fmt17(times[i]), fmt17(orders[i]), fmt17(states[i, 0])]))
        mine = "\n".join(lines) + "\n"
        assert mine == (tmp_path / "trajectory.csv").read_text()

    def test_learnable_order_seeded_parity(self, tmp_path):
        run_cli(["solve", "--out", str(tmp_path), "--set", "order=grid:0.7",
                 "--set", "steps=40", "--set", "seed=9"], cwd=tmp_path)
        times, states, orders = vb.solve("ABM_P", "linear:-1.0", "grid:0.7",
                                         [1.0], 0.0, 1.0, 40, seed=9)
        cli_lines = (tmp_path / "trajectory.csv").read_text().strip().splitlines()[1:]
        for i, line in enumerate(cli_lines):
            t, alpha, x = line.split(",")
            assert fmt17(times[i]) == t
            assert fmt17(orders[i]) == alpha
            assert fmt17(states[i, 0]) == x

    def test_zero_rhs_constant_arrays(self):
        times, states, orders = vb.solve("L1", "zero", "const:0.9", [4.0, -1.0],
                                         0.0, 1.0, 12)
        assert np.all(states == np.tile([4.0, -1.0], (13, 1)))
        assert times.shape == (13,) and orders.shape == (13,)

    def test_callable_rhs_matches_registry(self):
        _, via_name, _ = vb.solve("ABM_P", "linear:-1.0", "const:0.6", [1.0], 0.0, 1.0, 200)
        calls = []

        def f(t, x):
            calls.append(t)
            return -x

        _, via_callable, _ = vb.solve("ABM_P", f, "const:0.6", [1.0], 0.0, 1.0, 200)
        assert np.max(np.abs(via_name - via_callable)) <= 1e-12
        assert len(calls) == 201  # once per grid point

    def test_divergence_carries_step_index(self):
        with np.errstate(over="ignore"), pytest.raises(DivergenceError) as err:
            vb.solve("ABM_P", "linear:1e200", "const:1.0", [1.0], 0.0, 4.0, 4)
        assert err.value.step == 2


class TestVpTrainParity:
    def test_history_equals_cli_csv(self, tmp_path):
        run_cli(["vp-train", "--out", str(tmp_path), "--set", "iterations=60",
                 "--set", "j_points=8", "--set", "seed=4"], cwd=tmp_path)
        history, trace = vb.vp_train(60, 8, seed=4)
        csv_lines = (tmp_path / "loss_history.csv").read_text().strip().splitlines()[1:]
        assert len(csv_lines) == history.shape[0]
        for row, line in zip(history, csv_lines):
            assert ",".join(fmt17(v) for v in row) == line
        trace_lines = (tmp_path / "alpha_trace.csv").read_text().strip().splitlines()[1:]
        for row, line in zip(trace, trace_lines):
            assert ",".join(fmt17(v) for v in row) == line

    def test_small_run_loss_bound(self):
        history, _ = vb.vp_train(200, 10, seed=0)
        assert history[-1, 3] <= 1e-2

    def test_invalid_grid_rejected(self):
        with pytest.raises(ConfigError):
            vb.vp_train(10, 0, seed=0)


class TestWeightsParity:
    def test_unit_order_rows(self):
        row = vb.weights("ABM_P", 5, 1.0)
        assert row.weights.tolist() == [1.0] * 6
        assert row.implicit_weight == 0.0

    def test_matches_cli_lines(self, tmp_path):
        proc = run_cli(["weights", "--set", "scheme=ABM_PC", "--set", "n=3",
                        "--set", "alpha=0.7"], cwd=tmp_path)
        lines = proc.stdout.strip().splitlines()
        row = vb.weights("ABM_PC", 3, 0.7)
        assert "weights," + ",".join(fmt17(w) for w in row.weights) == lines[0]
        assert "scale," + fmt17(row.scale) == lines[1]
        assert "implicit," + fmt17(row.implicit_weight) == lines[3]


class TestCheckpoints:
    def test_round_trip_mirrors_engine_format(self, tmp_path):
        rng = np.random.default_rng(0)
        params = {"a.w": rng.standard_normal((3, 2)), "a.b": rng.standard_normal(2)}
        path = tmp_path / "ckpt.json"
        vb.save_checkpoint(params, path)
        loaded = vb.load_checkpoint(path)
        assert set(loaded) == set(params)
        for name in params:
            assert np.array_equal(loaded[name], params[name])
