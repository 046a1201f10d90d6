"""Thin scripting bindings over the vofde engine.

This layer marshals plain Python and numpy values in and out of the engine;
it re-implements no numerics, so for a fixed seed its outputs are exactly the
numbers the ``vofde`` command line writes.  Long solves run in numpy, which
releases the interpreter lock inside its kernels; do not share a single
engine object across threads without external locking.

Right-hand sides may be registry names (``linear:<lam>``, ``logistic``,
``zero``) or a Python callable ``f(t, state) -> array``.  Callables cross the
binding boundary once per grid point on the predictor schemes (the corrector
adds one extra predicted-point call per step), which makes them the slow
path; prefer the registry names for long runs.
"""

from __future__ import annotations

from collections import namedtuple

import numpy as np

from vofde import autodiff as _ad
from vofde import solvers as _solvers
from vofde.cli import builtin_rhs as _builtin_rhs
from vofde.errors import (  # noqa: F401  (re-exported error surface)
    ConfigError,
    DivergenceError,
    DomainError,
    FormatError,
    NumericError,
    OptimizerError,
    ShapeError,
    TrainingError,
    VofdeError,
)
from vofde.fde_inverse import train_vp_with_state as _train_vp_with_state
from vofde.frac_core import abm_weights, corrector_weights, l1_weights
from vofde.nn import save_params as _save_params
from vofde.order_fn import make_order_model as _make_order_model
from vofde.solvers import Scheme, SolverConfig

__all__ = [
    "solve",
    "vp_train",
    "weights",
    "WeightsRow",
    "save_checkpoint",
    "load_checkpoint",
    "Scheme",
]

WeightsRow = namedtuple("WeightsRow", ["weights", "scale", "implicit_weight"])


def _as_rhs(rhs):
    if callable(rhs):
        def wrapped(t, x):
            value = rhs(float(t), np.array(x.data, copy=True))
            return _ad.Tensor(np.asarray(value, dtype=np.float64))

        return wrapped
    return _builtin_rhs(str(rhs))


def solve(scheme, rhs, order, x0, t0=0.0, t1=1.0, steps=100, memory_window=None, seed=0):
    """Run one solver and return (times, states, orders) as float64 arrays.

    Arguments mirror the ``vofde solve`` command: ``scheme`` is L1, ABM_P, or
    ABM_PC; ``order`` is a descriptor like ``const:0.5`` or ``grid:0.8``;
    ``rhs`` is a registry name or a callable. Engine errors propagate as the
    engine's own exception types (divergence carries the failing step index).
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    rng = np.random.default_rng(int(seed))
    store = _ad.ParamStore()
    order_model = _make_order_model(str(order), store, float(t0), float(t1), rng,
                                    state_dim=x0.size)
    cfg = SolverConfig(
        t0=float(t0), t1=float(t1), steps=int(steps),
        scheme=Scheme(str(scheme)),
        memory_window=None if memory_window is None else int(memory_window),
    )
    traj = _solvers.solve(_as_rhs(rhs), order_model, x0, cfg)
    return traj.times.copy(), traj.states.copy(), traj.orders.copy()


def vp_train(iterations, j_points, seed=0, lr=0.01, lambda1=1.0, lambda2=1.0,
             order_kind="grid", order_init=0.8):
    """Run the logistic-inverse trainer; returns (loss_history, alpha_trace).

    ``loss_history`` rows are (iteration, l_eqn, l_ini, l_total) at the
    checkpoint iterations, ``alpha_trace`` rows are (t, alpha) for the final
    learned order. Numbers equal the CLI's CSV contents for the same seed.
    """
    reports, _ = _train_vp_with_state(
        int(iterations), int(j_points), int(seed), lr=float(lr),
        lambda1=float(lambda1), lambda2=float(lambda2),
        order_kind=str(order_kind), order_init=float(order_init),
    )
    history = np.array([(r.iteration, r.l_eqn, r.l_ini, r.l_total) for r in reports])
    return history, reports[-1].learned_alpha_trace.copy()


def weights(scheme, n, alpha):
    """Coefficient row for one step: (weights, scale, implicit_weight)."""
    kernel = {
        Scheme.L1: l1_weights,
        Scheme.ABM_P: abm_weights,
        Scheme.ABM_PC: corrector_weights,
    }[Scheme(str(scheme))]
    row = kernel(int(n), float(alpha), 1.0)
    return WeightsRow(row.weights.copy(), row.scale, row.implicit_weight)


def save_checkpoint(params: dict, path) -> None:
    """Write {name: array} to the engine's JSON checkpoint format."""
    store = _ad.ParamStore()
    for name, value in params.items():
        store.add(str(name), np.asarray(value, dtype=np.float64))
    _save_params(store, path)


def load_checkpoint(path) -> dict:
    """Read a JSON checkpoint back into {name: float64 array}."""
    import json

    with open(path) as fh:
        raw = json.load(fh)
    out = {}
    for name, entry in raw.items():
        out[name] = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
    return out
