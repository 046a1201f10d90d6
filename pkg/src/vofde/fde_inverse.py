"""Inverse problems: residuals for multi-term variable-order dynamics and the
logistic-growth training pipeline.

Two residual modes are provided. The series mode scores a truncated power
ansatz u(t) = u0 + sum_i a_i t^i against a multi-term equation
``sum_k Q_k(t) D^{alpha_k(t)} u = h(t, u)`` using the closed-form fractional
derivative of each power term. The network mode trains a small MLP u_hat(t)
to match the explicit fractional-Euler solution of the logistic equation
``D^{alpha(t)} u = 0.3 u (1 - u)``, ``u(0) = 0.1``, while the order function
is learned jointly; losses are the squared trajectory mismatch plus a
repeated initial-condition penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tape, Tensor
from .errors import ConfigError, DomainError, NumericError, TrainingError, OptimizerError
from .nn import AdamState, Mlp, adam_step
from .order_fn import make_order_model, order_trace
from .solvers import Scheme, SolverConfig, solve_abm_predictor

SERIES_TERMS = 5  # truncation degree r of the power ansatz


class PowerSeriesModel:
    """Truncated power ansatz with learnable coefficients a_0..a_r."""

    def __init__(self, store: ParamStore, name: str, u0: float, r: int = SERIES_TERMS):
        if r < 1:
            raise ConfigError("PowerSeriesModel: need r >= 1")
        self.u0 = float(u0)
        self.r = int(r)
        self._coeffs = store.add(f"{name}.coeffs", np.zeros(self.r + 1))
        self.param_names = (self._coeffs,)
        self._store = store

    def coeffs(self, leaves=None) -> Tensor:
        if leaves is not None:
            return leaves[self._coeffs]
        return Tensor(self._store.get(self._coeffs))

    def set_coeffs(self, values) -> None:
        self._store.set(self._coeffs, np.asarray(values, dtype=np.float64))

    def evaluate(self, t: float, leaves=None) -> Tensor:
        powers = np.power(float(t), np.arange(self.r + 1.0))
        return self.u0 + ad.matmul(Tensor(powers), self.coeffs(leaves))


@dataclass
class MultiTermProblem:
    """m+1 weighted fractional terms equated to a forcing h(t, u) on a grid."""

    m: int
    q_funcs: list
    orders: list
    h_rhs: object
    t_grid: np.ndarray

    def __post_init__(self):
        self.t_grid = np.asarray(self.t_grid, dtype=np.float64)
        if self.m < 0:
            raise ConfigError("MultiTermProblem: m must be non-negative")
        if len(self.q_funcs) != self.m + 1 or len(self.orders) != self.m + 1:
            raise ConfigError("MultiTermProblem: need m+1 coefficient functions and orders")
        if self.t_grid.ndim != 1 or self.t_grid.size == 0:
            raise ConfigError("MultiTermProblem: grid must be a nonempty vector")
        if not np.all(np.diff(self.t_grid) > 0.0):
            raise ConfigError("MultiTermProblem: grid must be strictly increasing")


def zeta_k(series: PowerSeriesModel, alpha_k, t: float, leaves=None) -> Tensor:
    """Closed-form fractional derivative of the power ansatz at time t.

    sum_{i>=1} Gamma(i+1)/Gamma(i+1-alpha_k(t)) a_i t^(i-alpha_k(t)); the
    constant term contributes nothing.
    """
    if not (t > 0.0):
        raise DomainError(f"zeta_k: t {t!r} must be positive")
    alpha = alpha_k.eval_order(t, None, leaves)
    i = np.arange(1.0, series.r + 1.0)
    numerators = Tensor(np.array([float(math.factorial(int(k))) for k in i]))
    denominators = ad.gamma_of(Tensor(i + 1.0) - alpha)
    t_pow = ad.pow_const_base(float(t), Tensor(i) - alpha)
    a_tail = ad.slice_rows(series.coeffs(leaves), 1)
    terms = ad.div(numerators * a_tail * t_pow, denominators)
    return ad.tsum(terms)


def equation_residual(problem: MultiTermProblem, series: PowerSeriesModel, leaves=None) -> Tensor:
    """Sum of squared pointwise residuals of the multi-term equation on the grid."""
    if not np.all(problem.t_grid > 0.0):
        raise DomainError("equation_residual: grid points must be positive")
    total = None
    for t in problem.t_grid:
        t = float(t)
        acc = None
        for q, alpha_k in zip(problem.q_funcs, problem.orders):
            term = ad.scalar_mul(float(q(t)), zeta_k(series, alpha_k, t, leaves))
            acc = term if acc is None else acc + term
        u_t = series.evaluate(t, leaves)
        resid = acc - ad._lift(problem.h_rhs(t, u_t))
        sq = ad.square(ad.reshape(resid, ()))
        total = sq if total is None else total + sq
    if not np.isfinite(total.data):
        raise NumericError("equation_residual: non-finite residual")
    return total


def vp_rhs(u):
    """Logistic growth rate 0.3 u (1 - u); zero at extinction and at capacity.

    Works on plain reals, arrays, and tracked tensors alike.
    """
    return 0.3 * u * (1.0 - u)


VP_U0 = 0.1


def _vp_solver_rhs(t, x):
    return vp_rhs(x)


def vp_network_residual(u_hat: Tensor, order, cfg: SolverConfig, leaves=None):
    """Trajectory-matching and initial-condition losses for the logistic problem.

    ``u_hat`` holds network outputs on the cfg grid (N+1 values, t=0 first).
    The equation loss compares u_hat against the fractional-Euler solution at
    grid points 1..N; the initial loss repeats the t=0 probe N times.
    """
    u_hat = ad._lift(u_hat)
    n_steps = cfg.steps
    if u_hat.data.size != n_steps + 1:
        raise ConfigError(
            f"vp_network_residual: {u_hat.data.size} network outputs for {n_steps + 1} grid points"
        )
    if not np.all(np.isfinite(u_hat.data)):
        raise NumericError("vp_network_residual: non-finite network output")
    u_hat = ad.reshape(u_hat, (n_steps + 1,))
    traj = solve_abm_predictor(_vp_solver_rhs, order, [VP_U0], cfg, leaves)
    u_solver = ad.concat(traj.state_tensors)
    diff = ad.slice_rows(u_hat - u_solver, 1)
    l_eqn = ad.tsum(ad.square(diff))
    probe = ad.slice_rows(u_hat, 0, 1) - VP_U0
    l_ini = ad.scalar_mul(float(n_steps), ad.tsum(ad.square(probe)))
    return l_eqn, l_ini


@dataclass
class LossReport:
    """Losses on the held-out random grid at one checkpoint iteration."""

    l_eqn: float
    l_ini: float
    l_total: float
    iteration: int
    learned_alpha_trace: np.ndarray


VP_CHECKPOINTS = (200, 500, 1000, 1500, 2000)


class VpSetup:
    """Network, order model, and grids for one logistic training run."""

    def __init__(self, j_points: int, seed: int, order_kind: str = "grid",
                 order_init: float = 0.8, hidden: int = 30):
        if j_points < 1 or int(j_points) != j_points:
            raise ConfigError(f"train_vp: j_points {j_points!r} must be a positive integer")
        self.j_points = int(j_points)
        self.rng = np.random.default_rng(seed)
        self.store = ParamStore()
        self.net = Mlp(self.store, "u_net", [1, hidden, hidden, 1], self.rng)
        self.order = make_order_model(
            f"{order_kind}:{order_init}", self.store, 0.0, 1.0, self.rng,
            name="order", state_dim=1,
        )
        self.cfg = SolverConfig(0.0, 1.0, self.j_points, Scheme.ABM_P)
        self.grid = np.linspace(0.0, 1.0, self.j_points + 1)
        self.test_ts = self.rng.uniform(0.0, 1.0, self.j_points)

    def net_values(self, ts, leaves) -> Tensor:
        column = Tensor(np.asarray(ts, dtype=np.float64).reshape(-1, 1))
        return self.net.forward(leaves, column)

    def train_losses(self, leaves):
        u_hat = self.net_values(self.grid, leaves)
        return vp_network_residual(u_hat, self.order, self.cfg, leaves)

    def test_losses(self):
        """Losses at the frozen random test points, all plain floats."""
        leaves = self.store.bind(None)
        traj = solve_abm_predictor(_vp_solver_rhs, self.order, [VP_U0], self.cfg, leaves)
        u_interp = np.interp(self.test_ts, traj.times, traj.states[:, 0])
        u_hat = self.net_values(self.test_ts, leaves).data.reshape(-1)
        l_eqn = float(np.sum((u_hat - u_interp) ** 2))
        u_zero = float(self.net_values([0.0], leaves).data.reshape(-1)[0])
        l_ini = float(self.j_points) * (u_zero - VP_U0) ** 2
        return l_eqn, l_ini, traj


def train_vp_with_state(iterations: int, j_points: int, seed: int, lr: float = 0.01,
                        lambda1: float = 1.0, lambda2: float = 1.0,
                        order_kind: str = "grid", order_init: float = 0.8,
                        checkpoints=VP_CHECKPOINTS):
    """Run the logistic training loop; returns (reports, trained setup)."""
    if iterations < 1 or int(iterations) != iterations:
        raise ConfigError(f"train_vp: iterations {iterations!r} must be a positive integer")
    setup = VpSetup(j_points, seed, order_kind=order_kind, order_init=order_init)
    adam = AdamState(lr=lr)
    marks = sorted({int(c) for c in checkpoints if 1 <= c <= iterations} | {int(iterations)})
    reports: list[LossReport] = []
    for it in range(1, int(iterations) + 1):
        tape = Tape()
        leaves = setup.store.bind(tape)
        l_eqn, l_ini = setup.train_losses(leaves)
        l_total = ad.scalar_mul(lambda1, l_eqn) + ad.scalar_mul(lambda2, l_ini)
        if not np.isfinite(l_total.data):
            raise TrainingError(f"train_vp: non-finite loss at iteration {it}", reports)
        tape.backward(l_total)
        grads = {name: leaves[name].grad for name in setup.store.names()}
        try:
            adam_step(setup.store, grads, adam)
        except OptimizerError as exc:
            raise TrainingError(f"train_vp: {exc} at iteration {it}", reports) from exc
        if it in marks:
            te, ti, traj = setup.test_losses()
            reports.append(LossReport(
                l_eqn=te,
                l_ini=ti,
                l_total=lambda1 * te + lambda2 * ti,
                iteration=it,
                learned_alpha_trace=order_trace(setup.order, traj),
            ))
    return reports, setup


def train_vp(iterations: int, j_points: int, seed: int, lr: float = 0.01,
             lambda1: float = 1.0, lambda2: float = 1.0, order_kind: str = "grid",
             order_init: float = 0.8, checkpoints=VP_CHECKPOINTS) -> list[LossReport]:
    """Jointly fit the output network and the order function to the logistic problem.

    Returns reports (held-out losses plus the current order trace) at each
    checkpoint iteration that lies within the run, always including the final
    iteration.
    """
    reports, _ = train_vp_with_state(
        iterations, j_points, seed, lr=lr, lambda1=lambda1, lambda2=lambda2,
        order_kind=order_kind, order_init=order_init, checkpoints=checkpoints,
    )
    return reports
