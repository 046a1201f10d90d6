"""Reverse-mode differentiation on a flat tape of dense float64 tensors.

A ``Tape`` records every primitive applied to tracked tensors, in execution
order; ``Tape.backward`` replays the records once, in reverse, accumulating
adjoints into ``Tensor.grad``.  Tensors built from plain numbers or arrays
(and any op whose inputs are all untracked) bypass recording entirely, so the
same solver code runs at plain-numpy speed when no gradients are requested.

The power and gamma primitives exist because solver coefficient rows such as
``(n+1-j)^alpha`` and scales such as ``Gamma(2-alpha) h^alpha`` must be
differentiable in the order ``alpha``.  ``pow_const_base`` shares its forward
kernel (and the 0^e := 0 convention) with the weight-row module, so tracked
and untracked solves produce bit-identical trajectories.
"""

from __future__ import annotations

import numpy as np

from . import frac_core
from .errors import ConfigError, DomainError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "ParamStore",
    "add",
    "sub",
    "hadamard",
    "div",
    "scalar_mul",
    "matmul",
    "sigmoid",
    "tanh",
    "relu",
    "log",
    "row_softmax",
    "square",
    "tsum",
    "tmean",
    "concat",
    "reshape",
    "slice_rows",
    "gather_rows",
    "pow_const_base",
    "pow_var_base",
    "gamma_of",
    "reciprocal",
    "grad_check",
]


class Tape:
    """Append-only record of primitive applications.

    Insertion order is a topological order of the computation, so the
    backward pass is a single reverse sweep that visits each node once.
    """

    __slots__ = ("_nodes",)

    def __init__(self):
        self._nodes = []

    def __len__(self):
        return len(self._nodes)

    def _record(self, out, backward):
        self._nodes.append((out, backward))

    def backward(self, output: "Tensor") -> None:
        """Seed d(output)/d(output) = 1 and sweep the tape in reverse."""
        if output.tape is not self:
            raise ShapeError("backward: output does not belong to this tape")
        if output.data.size != 1:
            raise ShapeError("backward: output must be scalar-valued")
        output.grad = np.ones_like(output.data)
        for out, backward_fn in reversed(self._nodes):
            if out.grad is not None:
                backward_fn(out.grad)


class Tensor:
    """Dense row-major float64 array, optionally tracked on a tape."""

    __slots__ = ("data", "grad", "tape")

    def __init__(self, data, tape: Tape | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.tape = tape

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tracked = "tracked" if self.tape is not None else "constant"
        return f"Tensor({self.data!r}, {tracked})"

    # Operator sugar; plain numbers and arrays are lifted to constants.
    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return hadamard(self, _lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return scalar_mul(-1.0, self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*tensors) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and tape is not t.tape:
                raise ShapeError("operands belong to different tapes")
            tape = t.tape
    return tape


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.tape is None:
        return
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum an upstream gradient down to the shape of a broadcast operand."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _make(data, tape, backward) -> Tensor:
    out = Tensor(data, tape)
    if tape is not None:
        tape._record(out, backward)
    return out


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    tape = _tape_of(a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, tape, backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    tape = _tape_of(a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(a.data - b.data, tape, backward)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = _lift(a), _lift(b)
    tape = _tape_of(a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, tape, backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    tape = _tape_of(a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(a.data / b.data, tape, backward)


def scalar_mul(c: float, a: Tensor) -> Tensor:
    a = _lift(a)
    c = float(c)

    def backward(g):
        _accumulate(a, c * g)

    return _make(c * a.data, a.tape, backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix/vector product for 1-D and 2-D operands."""
    a, b = _lift(a), _lift(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ShapeError(f"matmul: unsupported ranks {a.data.ndim} and {b.data.ndim}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dims {a.data.shape} x {b.data.shape}")
    tape = _tape_of(a, b)

    def backward(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:
            _accumulate(a, g * bd)
            _accumulate(b, g * ad)
        elif ad.ndim == 1:  # (k,) @ (k,n) -> (n,)
            _accumulate(a, bd @ g)
            _accumulate(b, np.outer(ad, g))
        elif bd.ndim == 1:  # (m,k) @ (k,) -> (m,)
            _accumulate(a, np.outer(g, bd))
            _accumulate(b, ad.T @ g)
        else:
            _accumulate(a, g @ bd.T)
            _accumulate(b, ad.T @ g)

    return _make(a.data @ b.data, tape, backward)


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def sigmoid(a: Tensor) -> Tensor:
    a = _lift(a)
    val = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        _accumulate(a, g * val * (1.0 - val))

    return _make(val, a.tape, backward)


def tanh(a: Tensor) -> Tensor:
    a = _lift(a)
    val = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - val * val))

    return _make(val, a.tape, backward)


def relu(a: Tensor) -> Tensor:
    a = _lift(a)

    def backward(g):
        _accumulate(a, g * (a.data > 0.0))

    return _make(np.maximum(a.data, 0.0), a.tape, backward)


def log(a: Tensor) -> Tensor:
    a = _lift(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log: non-positive entry")

    def backward(g):
        _accumulate(a, g / a.data)

    return _make(np.log(a.data), a.tape, backward)


def square(a: Tensor) -> Tensor:
    a = _lift(a)

    def backward(g):
        _accumulate(a, 2.0 * g * a.data)

    return _make(a.data * a.data, a.tape, backward)


def reciprocal(a: Tensor) -> Tensor:
    a = _lift(a)
    val = 1.0 / a.data

    def backward(g):
        _accumulate(a, -g * val * val)

    return _make(val, a.tape, backward)


# ---------------------------------------------------------------------------
# reductions and structure


def row_softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax of a 2-D tensor, optionally restricted to a support mask.

    Masked-out entries get probability exactly 0; every row of the mask must
    have at least one admissible entry.
    """
    a = _lift(a)
    if a.data.ndim != 2:
        raise ShapeError("row_softmax: expected a 2-D tensor")
    logits = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != logits.shape:
            raise ShapeError("row_softmax: mask shape mismatch")
        if not mask.any(axis=1).all():
            raise ShapeError("row_softmax: a row has empty support")
        logits = np.where(mask, logits, -np.inf)
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    val = expd / expd.sum(axis=1, keepdims=True)

    def backward(g):
        inner = (g * val).sum(axis=1, keepdims=True)
        _accumulate(a, val * (g - inner))

    return _make(val, a.tape, backward)


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    a = _lift(a)

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return _make(a.data.sum(axis=axis), a.tape, backward)


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    a = _lift(a)
    count = a.data.size if axis is None else a.data.shape[axis]

    def backward(g):
        scaled = g / count
        if axis is None:
            _accumulate(a, np.broadcast_to(scaled, a.data.shape).copy())
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(scaled, axis), a.data.shape).copy())

    return _make(a.data.mean(axis=axis), a.tape, backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input list")
    tape = _tape_of(*tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, stop)
            _accumulate(t, g[tuple(index)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tape, backward)


def reshape(a: Tensor, shape) -> Tensor:
    a = _lift(a)

    def backward(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), a.tape, backward)


def transpose(a: Tensor) -> Tensor:
    a = _lift(a)
    if a.data.ndim != 2:
        raise ShapeError("transpose: expected a 2-D tensor")

    def backward(g):
        _accumulate(a, g.T)

    return _make(a.data.T, a.tape, backward)


def slice_rows(a: Tensor, start: int, stop: int | None = None) -> Tensor:
    """Contiguous row slice a[start:stop]; the adjoint scatters back with zeros."""
    a = _lift(a)
    stop_idx = a.data.shape[0] if stop is None else stop

    def backward(g):
        full = np.zeros_like(a.data)
        full[start:stop_idx] = g
        _accumulate(a, full)

    return _make(a.data[start:stop_idx], a.tape, backward)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows by integer index array (duplicates allowed)."""
    a = _lift(a)
    indices = np.asarray(indices, dtype=np.intp)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, indices, g)
        _accumulate(a, full)

    return _make(a.data[indices], a.tape, backward)


# ---------------------------------------------------------------------------
# power and gamma primitives


def pow_const_base(base, exponent: Tensor) -> Tensor:
    """base ** exponent for a constant base (scalar or array) and tensor exponent.

    Follows the kernel convention 0^e := 0 (value and derivative) so weight
    rows stay exact in the alpha -> 1 limit.  Negative bases are rejected.
    """
    exponent = _lift(exponent)
    base_arr = np.asarray(base, dtype=np.float64)
    if np.any(base_arr < 0.0):
        raise DomainError("pow_const_base: negative base")
    val = frac_core.zero_safe_pow(base_arr, exponent.data)
    with np.errstate(divide="ignore"):
        log_base = np.where(base_arr > 0.0, np.log(np.where(base_arr > 0.0, base_arr, 1.0)), 0.0)

    def backward(g):
        local = g * val * log_base
        _accumulate(exponent, _unbroadcast(np.asarray(local), exponent.data.shape))

    return _make(val, exponent.tape, backward)


def pow_var_base(base: Tensor, exponent: float) -> Tensor:
    """base ** exponent for tensor base > 0 and a constant exponent."""
    base = _lift(base)
    if np.any(base.data <= 0.0):
        raise DomainError("pow_var_base: base must be strictly positive")
    exponent = float(exponent)
    val = np.power(base.data, exponent)

    def backward(g):
        _accumulate(base, g * exponent * np.power(base.data, exponent - 1.0))

    return _make(val, base.tape, backward)


_gamma_vec = np.vectorize(frac_core.gamma, otypes=[np.float64])
_digamma_vec = np.vectorize(frac_core.digamma, otypes=[np.float64])


def gamma_of(a: Tensor) -> Tensor:
    """Elementwise gamma function; the adjoint is Gamma(x) psi(x)."""
    a = _lift(a)
    val = _gamma_vec(a.data) if a.data.ndim else np.float64(frac_core.gamma(float(a.data)))

    def backward(g):
        psi = _digamma_vec(a.data) if a.data.ndim else frac_core.digamma(float(a.data))
        _accumulate(a, g * val * psi)

    return _make(val, a.tape, backward)


# ---------------------------------------------------------------------------
# parameters and gradient checking


class ParamStore:
    """Flat named storage for every learnable array of a model ensemble.

    ``bind`` creates one leaf tensor per parameter on a tape; gradients
    accumulate on those leaves during ``Tape.backward``.  Binding with
    ``tape=None`` yields untracked views for pure evaluation.
    """

    def __init__(self):
        self._arrays: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> str:
        if name in self._arrays:
            raise ConfigError(f"parameter {name!r} already registered")
        self._arrays[name] = np.array(value, dtype=np.float64)
        return name

    def get(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def set(self, name: str, value) -> None:
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != self._arrays[name].shape:
            raise ShapeError(f"parameter {name!r}: shape {arr.shape} != {self._arrays[name].shape}")
        self._arrays[name] = arr

    def names(self) -> list[str]:
        return list(self._arrays)

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def n_values(self) -> int:
        return sum(a.size for a in self._arrays.values())

    def bind(self, tape: Tape | None) -> dict[str, Tensor]:
        return {name: Tensor(arr, tape) for name, arr in self._arrays.items()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self._arrays.items()}

    def restore(self, snapshot: dict[str, np.ndarray]) -> None:
        for name, arr in snapshot.items():
            self.set(name, arr)


def grad_check(loss_fn, store: ParamStore, rel_tol: float = 1e-4, fd_step: float = 1e-6):
    """Compare tape gradients of a scalar loss against central differences.

    ``loss_fn(leaves, tape)`` must build and return a scalar Tensor from the
    bound leaves.  Returns ``(max_rel, worst_name)`` where ``max_rel`` is the
    largest |autodiff - central| / max(1e-8, |central|) over every parameter
    entry; ``worst_name`` identifies the offending entry.
    """
    tape = Tape()
    leaves = store.bind(tape)
    loss = loss_fn(leaves, tape)
    tape.backward(loss)
    analytic = {
        name: (leaves[name].grad if leaves[name].grad is not None else np.zeros_like(store.get(name)))
        for name in store.names()
    }

    def eval_loss() -> float:
        return float(loss_fn(store.bind(None), None).data)

    max_rel = 0.0
    worst = ""
    for name in store.names():
        arr = store.get(name)
        flat = arr.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            step = fd_step * max(1.0, abs(orig))
            flat[idx] = orig + step
            up = eval_loss()
            flat[idx] = orig - step
            down = eval_loss()
            flat[idx] = orig
            central = (up - down) / (2.0 * step)
            ad = analytic[name].reshape(-1)[idx]
            rel = abs(ad - central) / max(1e-8, abs(central))
            if rel > max_rel:
                max_rel = rel
                worst = f"{name}[{idx}]"
    return max_rel, worst
