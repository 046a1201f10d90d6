"""Order functions mapping (t, state) to a fractional order in (floor, 1].

Four designs are provided:

* ``ConstantOrder``   -- a fixed value; ``ConstantOrder(1.0)`` recovers the
                         classical integer-order schemes exactly.
* ``GridInterpOrder`` -- learnable values on a uniform time grid, linearly
                         interpolated, then squashed into range.
* ``TimeNetOrder``    -- an MLP over a sinusoidal embedding of t.
* ``StateNetOrder``   -- an MLP over the time embedding concatenated with the
                         (optionally row-mean pooled) state.

All learnable designs emit ``floor + (1 - floor) * sigmoid(raw)``; the floor
(default 1e-3) keeps the weight kernels away from the degenerate order-zero
regime.  Network heads start at zero weight with the bias chosen so the
initial order equals the requested constant, which makes order traces start
exactly at their configured value.
"""

from __future__ import annotations

import json
import math

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .errors import ConfigError, DomainError, FormatError, ShapeError
from .nn import Mlp

ORDER_FLOOR = 1e-3


def squash(raw: Tensor, floor: float = ORDER_FLOOR) -> Tensor:
    """Map an unconstrained scalar into (floor, 1)."""
    return floor + ad.scalar_mul(1.0 - floor, ad.sigmoid(raw))


def inverse_squash(alpha: float, floor: float = ORDER_FLOOR) -> float:
    if not (floor < alpha < 1.0):
        raise DomainError(f"inverse_squash: target order {alpha!r} outside ({floor}, 1)")
    p = (alpha - floor) / (1.0 - floor)
    return math.log(p / (1.0 - p))


def sinusoidal_embed(t: float, dim: int, t_max: float) -> np.ndarray:
    """Interleaved (sin, cos) position features, dim must be even.

    Wavelengths follow the transformer convention omega_k = t_max^(2k/dim);
    every entry lies in [-1, 1].
    """
    if dim <= 0 or dim % 2 != 0:
        raise ShapeError(f"sinusoidal_embed: dim {dim!r} must be a positive even integer")
    out = np.empty(dim)
    for k in range(dim // 2):
        omega = float(t_max) ** (2.0 * k / dim)
        out[2 * k] = math.sin(t / omega)
        out[2 * k + 1] = math.cos(t / omega)
    return out


class ConstantOrder:
    """A fixed order; ignores time, state, and parameters."""

    kind = "constant"
    param_names = ()

    def __init__(self, value: float, floor: float = ORDER_FLOOR):
        value = float(value)
        if not (floor <= value <= 1.0):
            raise DomainError(f"ConstantOrder: value {value!r} outside [{floor}, 1]")
        self.value = value
        self.floor = floor

    def eval_order(self, t, x=None, leaves=None) -> Tensor:
        return Tensor(self.value)

    def meta(self) -> dict:
        return {"kind": self.kind, "value": self.value, "floor": self.floor}


class GridInterpOrder:
    """Learnable knot values on a uniform grid over [t0, t1].

    Knot values are linearly interpolated in t (clamped at the ends) and then
    squashed, so the order is continuous in t and monotone wherever the raw
    knots are.
    """

    kind = "grid"

    def __init__(self, store: ParamStore, name: str, t0: float, t1: float,
                 n_knots: int = 11, init: float = 0.8, floor: float = ORDER_FLOOR):
        if n_knots < 2:
            raise ConfigError("GridInterpOrder: need at least 2 knots")
        self.floor = floor
        self.knot_times = np.linspace(float(t0), float(t1), int(n_knots))
        raw = inverse_squash(init, floor)
        self._knots = store.add(f"{name}.knots", np.full(int(n_knots), raw))
        self.param_names = (self._knots,)
        self._store = store

    def _interp_weights(self, t: float) -> np.ndarray:
        knots = self.knot_times
        w = np.zeros(knots.size)
        if t <= knots[0]:
            w[0] = 1.0
        elif t >= knots[-1]:
            w[-1] = 1.0
        else:
            hi = int(np.searchsorted(knots, t, side="right"))
            lo = hi - 1
            frac = (t - knots[lo]) / (knots[hi] - knots[lo])
            w[lo] = 1.0 - frac
            w[hi] = frac
        return w

    def _leaf(self, leaves) -> Tensor:
        if leaves is not None:
            return leaves[self._knots]
        return Tensor(self._store.get(self._knots))

    def eval_order(self, t, x=None, leaves=None) -> Tensor:
        raw = ad.matmul(Tensor(self._interp_weights(float(t))), self._leaf(leaves))
        return squash(raw, self.floor)

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "floor": self.floor,
            "knot_times": [float(v) for v in self.knot_times],
        }


def _constant_head(store: ParamStore, mlp: Mlp, init: float, floor: float) -> None:
    """Zero the final layer and set its bias so the net starts at order `init`."""
    wname, bname = mlp.layer_names[-1]
    store.set(wname, np.zeros_like(store.get(wname)))
    store.set(bname, np.full_like(store.get(bname), inverse_squash(init, floor)))


class TimeNetOrder:
    """MLP over a sinusoidal time embedding, squashed into (floor, 1)."""

    kind = "timenet"

    def __init__(self, store: ParamStore, name: str, t_max: float, rng,
                 embed_dim: int = 8, hidden: int = 30, init: float = 0.8,
                 floor: float = ORDER_FLOOR):
        if embed_dim % 2 != 0:
            raise ShapeError("TimeNetOrder: embed_dim must be even")
        self.floor = floor
        self.embed_dim = int(embed_dim)
        self.t_max = float(t_max)
        self.net = Mlp(store, f"{name}.net", [self.embed_dim, hidden, 1], rng)
        _constant_head(store, self.net, init, floor)
        self.param_names = tuple(n for pair in self.net.layer_names for n in pair)
        self._store = store

    def _leaves(self, leaves):
        return leaves if leaves is not None else self._store.bind(None)

    def eval_order(self, t, x=None, leaves=None) -> Tensor:
        feats = Tensor(sinusoidal_embed(float(t), self.embed_dim, self.t_max))
        raw = ad.reshape(self.net.forward(self._leaves(leaves), feats), ())
        return squash(raw, self.floor)

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "floor": self.floor,
            "embed_dim": self.embed_dim,
            "t_max": self.t_max,
        }


class StateNetOrder:
    """MLP over [time embedding, state features], squashed into (floor, 1).

    For matrix-valued states the solver hands over a flattened vector;
    ``pool_rows`` declares the row count so the state can be reshaped and
    row-mean pooled to a fixed-width feature vector, keeping the order a
    single scalar per step.
    """

    kind = "statenet"

    def __init__(self, store: ParamStore, name: str, state_dim: int, t_max: float, rng,
                 embed_dim: int = 8, hidden: int = 30, init: float = 0.8,
                 floor: float = ORDER_FLOOR, pool_rows: int | None = None):
        if embed_dim % 2 != 0:
            raise ShapeError("StateNetOrder: embed_dim must be even")
        self.floor = floor
        self.embed_dim = int(embed_dim)
        self.state_dim = int(state_dim)
        self.t_max = float(t_max)
        self.pool_rows = pool_rows
        self.net = Mlp(store, f"{name}.net", [self.embed_dim + self.state_dim, hidden, 1], rng)
        _constant_head(store, self.net, init, floor)
        self.param_names = tuple(n for pair in self.net.layer_names for n in pair)
        self._store = store

    def _pool(self, x: Tensor) -> Tensor:
        if self.pool_rows is not None:
            return ad.tmean(ad.reshape(x, (self.pool_rows, self.state_dim)), axis=0)
        if x.data.shape != (self.state_dim,):
            raise ShapeError(
                f"StateNetOrder: state width {x.data.shape} != ({self.state_dim},)"
            )
        return x

    def eval_order(self, t, x=None, leaves=None) -> Tensor:
        if x is None:
            raise ShapeError("StateNetOrder: state-dependent order needs the state")
        feats = Tensor(sinusoidal_embed(float(t), self.embed_dim, self.t_max))
        z = ad.concat([feats, self._pool(ad._lift(x))])
        raw = ad.reshape(self.net.forward(self._leaves(leaves), z), ())
        return squash(raw, self.floor)

    def _leaves(self, leaves):
        return leaves if leaves is not None else self._store.bind(None)

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "floor": self.floor,
            "embed_dim": self.embed_dim,
            "state_dim": self.state_dim,
            "t_max": self.t_max,
            "pool_rows": self.pool_rows,
        }


def eval_order(model, t, x=None, leaves=None) -> float:
    """Evaluate an order model outside any tape, returning a plain float."""
    return float(model.eval_order(t, x, leaves).data)


def order_trace(model, trajectory) -> np.ndarray:
    """Evaluate the order along a trajectory; rows are (t_n, alpha_n)."""
    times = trajectory.times
    if times.size == 0:
        raise ShapeError("order_trace: empty trajectory")
    out = np.empty((times.size, 2))
    for i, t in enumerate(times):
        out[i, 0] = t
        out[i, 1] = eval_order(model, t, Tensor(trajectory.states[i]))
    return out


def make_order_model(descriptor: str, store: ParamStore, t0: float, t1: float, rng,
                     name: str = "order", state_dim: int | None = None,
                     pool_rows: int | None = None):
    """Build an order model from a compact descriptor like ``const:1.0`` or ``grid:0.8``.

    Kinds: const (default value 0.8), grid, timenet, statenet. ``statenet``
    requires ``state_dim``.
    """
    parts = str(descriptor).split(":")
    kind = parts[0]
    init = float(parts[1]) if len(parts) > 1 and parts[1] else 0.8
    if kind in ("const", "constant"):
        return ConstantOrder(init)
    if kind == "grid":
        return GridInterpOrder(store, name, t0, t1, init=init)
    if kind == "timenet":
        return TimeNetOrder(store, name, t_max=t1, rng=rng, init=init)
    if kind == "statenet":
        if state_dim is None:
            raise ConfigError("statenet order needs a state dimension")
        return StateNetOrder(store, name, state_dim, t_max=t1, rng=rng,
                             init=init, pool_rows=pool_rows)
    raise ConfigError(f"unknown order kind {kind!r}")


# ---------------------------------------------------------------------------
# serialization


def order_model_to_json(model, store: ParamStore) -> str:
    from .nn import _fmt

    meta = model.meta()
    entries = [f"{json.dumps(k)}: {json.dumps(v)}" for k, v in meta.items()]
    params = []
    for pname in model.param_names:
        arr = store.get(pname)
        shape = ",".join(str(int(s)) for s in arr.shape)
        data = ",".join(_fmt(v) for v in arr.reshape(-1))
        params.append(f"{json.dumps(pname)}: {{\"shape\": [{shape}], \"data\": [{data}]}}")
    entries.append('"params": {' + ", ".join(params) + "}")
    return "{" + ", ".join(entries) + "}"


def save_order_model(model, store: ParamStore, path) -> None:
    with open(path, "w") as fh:
        fh.write(order_model_to_json(model, store))
        fh.write("\n")


def load_order_model(path, rng=None):
    """Rebuild an order model (and a fresh store holding its parameters)."""
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"order model {path}: invalid JSON ({exc})") from exc
    kind = raw.get("kind")
    store = ParamStore()
    rng = rng if rng is not None else np.random.default_rng(0)
    if kind == "constant":
        return ConstantOrder(raw["value"], raw.get("floor", ORDER_FLOOR)), store
    if kind == "grid":
        knot_times = np.asarray(raw["knot_times"], dtype=np.float64)
        model = GridInterpOrder(store, "order", knot_times[0], knot_times[-1],
                                n_knots=knot_times.size, floor=raw.get("floor", ORDER_FLOOR))
        model.knot_times = knot_times
    elif kind == "timenet":
        model = TimeNetOrder(store, "order", raw["t_max"], rng,
                             embed_dim=raw["embed_dim"], floor=raw.get("floor", ORDER_FLOOR))
    elif kind == "statenet":
        model = StateNetOrder(store, "order", raw["state_dim"], raw["t_max"], rng,
                              embed_dim=raw["embed_dim"], floor=raw.get("floor", ORDER_FLOOR),
                              pool_rows=raw.get("pool_rows"))
    else:
        raise FormatError(f"order model {path}: unknown kind {kind!r}")
    for pname, entry in raw["params"].items():
        if pname not in store:
            raise FormatError(f"order model {path}: unexpected parameter {pname!r}")
        store.set(pname, np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"]))
    return model, store
