"""Multilayer perceptrons, the Adam optimizer, and JSON parameter checkpoints."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import FormatError, OptimizerError, ShapeError

_ACTIVATIONS = {
    "tanh": ad.tanh,
    "relu": ad.relu,
    "sigmoid": ad.sigmoid,
    "linear": lambda t: t,
}


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def mlp_forward(layers, x: ad.Tensor) -> ad.Tensor:
    """Apply affine-then-activation layers to a (batch, d) or (d,) tensor.

    ``layers`` is a list of (weight Tensor (in, out), bias Tensor (out,),
    activation name) triples.
    """
    out = ad._lift(x)
    for weight, bias, activation in layers:
        if weight.data.shape[0] != out.data.shape[-1]:
            raise ShapeError(
                f"mlp_forward: input width {out.data.shape[-1]} vs weight {weight.data.shape}"
            )
        try:
            act = _ACTIVATIONS[activation]
        except KeyError:
            raise ShapeError(f"mlp_forward: unknown activation {activation!r}") from None
        out = act(ad.add(ad.matmul(out, weight), bias))
    return out


class Mlp:
    """A fully connected net whose parameters live in a shared ParamStore.

    Hidden layers use ``activation``; the final layer is linear.
    """

    def __init__(self, store, name, sizes, rng, activation="tanh"):
        if len(sizes) < 2:
            raise ShapeError("Mlp: need at least input and output sizes")
        self.name = name
        self.sizes = list(sizes)
        self.activation = activation
        self.layer_names = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            wname = store.add(f"{name}.w{i}", glorot_uniform(rng, fan_in, fan_out))
            bname = store.add(f"{name}.b{i}", np.zeros(fan_out))
            self.layer_names.append((wname, bname))

    def layers(self, leaves):
        n_layers = len(self.layer_names)
        triples = []
        for i, (wname, bname) in enumerate(self.layer_names):
            act = self.activation if i < n_layers - 1 else "linear"
            triples.append((leaves[wname], leaves[bname], act))
        return triples

    def forward(self, leaves, x) -> ad.Tensor:
        return mlp_forward(self.layers(leaves), x)


@dataclass
class AdamState:
    """Moment accumulators and hyperparameters for bias-corrected Adam."""

    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(store, grads: dict, state: AdamState) -> None:
    """One in-place Adam update of every parameter that received a gradient.

    Missing or None gradients are treated as zero (those parameters keep
    their value, though their moments still decay).
    """
    state.step += 1
    t = state.step
    for name in store.names():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(store.get(name))
        g = np.asarray(g, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise OptimizerError(f"adam_step: non-finite gradient for {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = state.m[name] / (1.0 - state.beta1**t)
        v_hat = state.v[name] / (1.0 - state.beta2**t)
        update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        store.set(name, store.get(name) - update)


# ---------------------------------------------------------------------------
# checkpoints: {name: {"shape": [...], "data": [...]}} with 17-digit reals


def _fmt(x: float) -> str:
    return "%.17g" % float(x)


def params_to_json(store) -> str:
    entries = []
    for name in store.names():
        arr = store.get(name)
        data = ",".join(_fmt(v) for v in arr.reshape(-1))
        shape = ",".join(str(int(s)) for s in arr.shape)
        entries.append(f"{json.dumps(name)}: {{\"shape\": [{shape}], \"data\": [{data}]}}")
    return "{" + ", ".join(entries) + "}"


def save_params(store, path) -> None:
    with open(path, "w") as fh:
        fh.write(params_to_json(store))
        fh.write("\n")


def load_params(store, path) -> None:
    """Restore checkpointed arrays into an already-constructed store."""
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"checkpoint {path}: invalid JSON ({exc})") from exc
    for name, entry in raw.items():
        if name not in store:
            raise FormatError(f"checkpoint {path}: unknown parameter {name!r}")
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        store.set(name, arr)
