"""Time-steppers for variable-order fractional dynamics with full-history memory.

Three schemes advance ``D^{alpha(t,x)} x = f(t, x)`` on a uniform grid, each
freezing the order at ``alpha_n = alpha(t_n, x_n)`` for the whole step:

* ``L1``     -- derivative form: x_{n+1} = sum_j a_j x_j + Gamma(2-a) h^a f_n
* ``ABM_P``  -- integral form:   x_{n+1} = x_0 + h^a/Gamma(1+a) sum_j b_j f_j
* ``ABM_PC`` -- the ABM prediction refined by a product-trapezoidal corrector
                that weights f at the predicted point by 1.

Every step re-weights the entire history (the weights depend on n through the
frozen order), so a solve costs O(N^2) right-hand-side combinations.  The
same code path serves plain numeric runs and runs recorded on a tape for
reverse-mode training; coefficient arithmetic mirrors the kernel formulas in
``frac_core`` bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DivergenceError, ShapeError
from .ioutil import fmt17


class Scheme(str, Enum):
    L1 = "L1"
    ABM_P = "ABM_P"
    ABM_PC = "ABM_PC"


@dataclass(frozen=True)
class SolverConfig:
    """Grid and scheme selection for one solve.

    ``memory_window``, when present, truncates the history sum to the most
    recent entries (L1 rows are renormalized to keep their unit sum).
    """

    t0: float
    t1: float
    steps: int
    scheme: Scheme
    memory_window: int | None = None

    def __post_init__(self):
        if not (self.t1 > self.t0):
            raise ConfigError(f"SolverConfig: t1 {self.t1!r} must exceed t0 {self.t0!r}")
        if self.steps < 1 or int(self.steps) != self.steps:
            raise ConfigError(f"SolverConfig: steps {self.steps!r} must be a positive integer")
        if self.scheme not in Scheme:
            raise ConfigError(f"SolverConfig: unknown scheme {self.scheme!r}")
        if self.memory_window is not None:
            if self.memory_window < 1 or self.memory_window > self.steps:
                raise ConfigError(
                    f"SolverConfig: memory_window {self.memory_window!r} outside [1, steps]"
                )

    @property
    def h(self) -> float:
        return (self.t1 - self.t0) / self.steps


@dataclass
class Trajectory:
    """Grid values produced by one solver run.

    ``orders[n]`` is the frozen order used to advance from t_n (the final
    entry is evaluated at t_N for completeness), ``rhs_evals[n]`` caches
    f(t_n, x_n) at the accepted states.  ``state_tensors`` holds the per-step
    tensors so training losses can keep differentiating through them.
    """

    times: np.ndarray
    states: np.ndarray
    orders: np.ndarray
    rhs_evals: np.ndarray
    state_tensors: list | None = None

    def to_csv(self, fh) -> None:
        d = self.states.shape[1]
        fh.write("t,alpha," + ",".join(f"x_{i}" for i in range(d)) + "\n")
        for n in range(self.times.size):
            row = [fmt17(self.times[n]), fmt17(self.orders[n])]
            row.extend(fmt17(v) for v in self.states[n])
            fh.write(",".join(row) + "\n")


def _as_state(value, d: int) -> Tensor:
    t = ad._lift(value)
    if t.data.ndim == 0 and d == 1:
        t = ad.reshape(t, (1,))
    if t.data.shape != (d,):
        raise ShapeError(f"rhs returned shape {t.data.shape}, expected ({d},)")
    return t


def _check_finite(x: Tensor, step: int) -> None:
    if not np.all(np.isfinite(x.data)):
        raise DivergenceError(step)


def _abm_row(n: int, a_n: Tensor) -> Tensor:
    j = np.arange(0.0, n + 1.0)
    return ad.pow_const_base(n + 1.0 - j, a_n) - ad.pow_const_base(n - j, a_n)


def _l1_row(n: int, a_n: Tensor) -> Tensor:
    e = 1.0 - a_n
    head = ad.pow_const_base(np.array([n + 1.0, float(n)]), e)
    w0 = ad.slice_rows(head, 0, 1) - ad.slice_rows(head, 1, 2)
    if n == 0:
        return w0
    j = np.arange(1.0, n + 1.0)
    rest = (
        2.0 * ad.pow_const_base(n + 1.0 - j, e)
        - ad.pow_const_base(n - j, e)
        - ad.pow_const_base(n + 2.0 - j, e)
    )
    return ad.concat([w0, rest])


def _corrector_row(n: int, a_n: Tensor) -> Tensor:
    w0 = ad.pow_const_base(float(n), a_n + 1.0) - (n - a_n) * ad.pow_const_base(n + 1.0, a_n)
    w0 = ad.reshape(w0, (1,))
    if n == 0:
        return w0
    j = np.arange(1.0, n + 1.0)
    rest = (
        ad.pow_const_base(n - j + 2.0, a_n + 1.0)
        + ad.pow_const_base(n - j, a_n + 1.0)
        - 2.0 * ad.pow_const_base(n - j + 1.0, a_n + 1.0)
    )
    return ad.concat([w0, rest])


def _solve(f, order, x0, cfg: SolverConfig, leaves=None) -> Trajectory:
    x0_t = ad._lift(x0)
    if x0_t.data.ndim == 0:
        x0_t = ad.reshape(x0_t, (1,))
    if x0_t.data.ndim != 1:
        raise ShapeError(f"x0 must be a vector, got shape {x0_t.data.shape}")
    d = x0_t.data.shape[0]
    n_steps = cfg.steps
    h = cfg.h
    times = cfg.t0 + h * np.arange(n_steps + 1)
    window = cfg.memory_window

    states = [x0_t]
    orders = []
    f_cache = []
    hist_f = None  # (k, d) tensor of f at accepted grid points
    hist_x = ad.reshape(x0_t, (1, d))  # state history, used by L1 only

    for n in range(n_steps):
        t_n = float(times[n])
        a_n = order.eval_order(t_n, states[n], leaves)
        orders.append(float(a_n.data))
        f_n = _as_state(f(t_n, states[n]), d)
        f_cache.append(f_n)
        f_row = ad.reshape(f_n, (1, d))
        hist_f = f_row if hist_f is None else ad.concat([hist_f, f_row])
        j0 = 0 if window is None else max(0, n + 1 - window)

        if cfg.scheme == Scheme.L1:
            w = _l1_row(n, a_n)
            hist = hist_x
            if j0 > 0:
                w = ad.slice_rows(w, j0)
                w = w / ad.tsum(w)  # keep the unit row sum under truncation
                hist = ad.slice_rows(hist, j0)
            scale = ad.gamma_of(2.0 - a_n) * ad.pow_const_base(h, a_n)
            x_next = ad.matmul(w, hist) + scale * f_n
        elif cfg.scheme == Scheme.ABM_P:
            w = _abm_row(n, a_n)
            scale = ad.div(ad.pow_const_base(h, a_n), ad.gamma_of(1.0 + a_n))
            if j0 > 0:
                w = ad.slice_rows(w, j0)
            hist = hist_f if j0 == 0 else ad.slice_rows(hist_f, j0)
            x_next = x0_t + scale * ad.matmul(w, hist)
        else:  # ABM_PC
            wp = _abm_row(n, a_n)
            scale_p = ad.div(ad.pow_const_base(h, a_n), ad.gamma_of(1.0 + a_n))
            wc = _corrector_row(n, a_n)
            scale_c = ad.div(ad.pow_const_base(h, a_n), ad.gamma_of(a_n + 2.0))
            hist = hist_f
            if j0 > 0:
                wp = ad.slice_rows(wp, j0)
                wc = ad.slice_rows(wc, j0)
                hist = ad.slice_rows(hist_f, j0)
            x_pred = x0_t + scale_p * ad.matmul(wp, hist)
            _check_finite(x_pred, n + 1)
            f_pred = _as_state(f(float(times[n + 1]), x_pred), d)
            x_next = x0_t + scale_c * (ad.matmul(wc, hist) + f_pred)

        _check_finite(x_next, n + 1)
        states.append(x_next)
        if cfg.scheme == Scheme.L1:
            hist_x = ad.concat([hist_x, ad.reshape(x_next, (1, d))])

    t_end = float(times[n_steps])
    orders.append(float(order.eval_order(t_end, states[n_steps], leaves).data))
    f_cache.append(_as_state(f(t_end, states[n_steps]), d))

    return Trajectory(
        times=times,
        states=np.stack([s.data for s in states]),
        orders=np.asarray(orders),
        rhs_evals=np.stack([fv.data for fv in f_cache]),
        state_tensors=states,
    )


def _expect_scheme(cfg: SolverConfig, scheme: Scheme) -> None:
    if cfg.scheme != scheme:
        raise ConfigError(f"config selects {cfg.scheme}, solver implements {scheme}")


def solve_l1(f, order, x0, cfg: SolverConfig, leaves=None) -> Trajectory:
    """Advance with the piecewise-linear derivative-form rows."""
    _expect_scheme(cfg, Scheme.L1)
    return _solve(f, order, x0, cfg, leaves)


def solve_abm_predictor(f, order, x0, cfg: SolverConfig, leaves=None) -> Trajectory:
    """Advance with the fractional-Euler (explicit rectangle) rows."""
    _expect_scheme(cfg, Scheme.ABM_P)
    return _solve(f, order, x0, cfg, leaves)


def solve_abm_pc(f, order, x0, cfg: SolverConfig, leaves=None) -> Trajectory:
    """Advance with one explicit prediction plus one corrector pass per step."""
    _expect_scheme(cfg, Scheme.ABM_PC)
    return _solve(f, order, x0, cfg, leaves)


def solve(f, order, x0, cfg: SolverConfig, leaves=None) -> Trajectory:
    """Scheme-dispatching front door."""
    return _solve(f, order, x0, cfg, leaves)


def linear_rhs(lam: float):
    """f(t, x) = lam * x."""
    lam = float(lam)

    def f(t, x):
        return lam * ad._lift(x)

    return f


def zero_rhs(t, x):
    return ad.scalar_mul(0.0, ad._lift(x))


def convergence_probe(f, order, x0, t1, n_list, oracle, scheme: Scheme = Scheme.ABM_P):
    """Max grid error against an analytic oracle for each grid size.

    ``oracle(t)`` must return the exact state. Returns [(N, max_err), ...]
    sorted by N; on problems the schemes converge for, errors decrease.
    """
    results = []
    for n_steps in sorted(int(n) for n in n_list):
        cfg = SolverConfig(t0=0.0, t1=float(t1), steps=n_steps, scheme=scheme)
        traj = _solve(f, order, x0, cfg)
        err = 0.0
        for i, t in enumerate(traj.times):
            exact = np.atleast_1d(np.asarray(oracle(float(t)), dtype=np.float64))
            err = max(err, float(np.max(np.abs(traj.states[i] - exact))))
        results.append((n_steps, err))
    return results
