"""Reverse-mode automatic differentiation over dense float64 arrays.

Each :class:`Tensor` produced by an operation records its parents and a
closure that pushes the output gradient back to them. :func:`grad` sorts the
recorded graph topologically and runs those closures in reverse.

Only the operations needed by the shallow GELU network and the training
losses are provided; this is not a general array library.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import AutodiffError, ConfigurationError, TrainingError

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "_parents", "_backward", "grad")
    __array_priority__ = 100.0

    def __init__(self, data, parents: tuple = (), backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self._parents = parents
        self._backward = backward
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"

    # arithmetic -----------------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other)
        a, b = self, other

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor(a.data + b.data, (a, b), backward)

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other)
        a, b = self, other

        def backward(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return Tensor(a.data * b.data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise AutodiffError("division by a Tensor is not supported")
        return self * (1.0 / np.asarray(other, dtype=np.float64))

    def __matmul__(self, other):
        other = _as_tensor(other)
        a, b = self, other
        if a.ndim != 2 or b.ndim != 2:
            raise AutodiffError("matmul supports 2-D operands only")

        def backward(g):
            return g @ b.data.T, a.data.T @ g

        return Tensor(a.data @ b.data, (a, b), backward)

    def __rmatmul__(self, other):
        return _as_tensor(other) @ self

    # shape and reductions -------------------------------------------------

    @property
    def T(self) -> "Tensor":
        return Tensor(self.data.T, (self,), lambda g: (g.T,))

    def reshape(self, *shape) -> "Tensor":
        src = self.shape
        return Tensor(self.data.reshape(*shape), (self,), lambda g: (g.reshape(src),))

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        src = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, src),)

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None) -> "Tensor":
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def square(self) -> "Tensor":
        x = self.data
        return Tensor(x * x, (self,), lambda g: (2.0 * x * g,))

    def take(self, index: np.ndarray) -> "Tensor":
        """Gather rows along axis 0; ``index`` may have any integer shape."""
        index = np.asarray(index)
        src = self.shape

        flat = index.ravel()

        def backward(g):
            g = g.reshape(flat.size, -1)
            out = np.empty((src[0], g.shape[1]))
            for j in range(g.shape[1]):
                out[:, j] = np.bincount(flat, weights=g[:, j], minlength=src[0])
            return (out.reshape(src),)

        return Tensor(self.data[index], (self,), backward)

    def left_multiply(self, matrix) -> "Tensor":
        """``matrix @ self`` for a constant (dense or scipy sparse) 2-D matrix."""
        if self.ndim != 2:
            raise AutodiffError("left_multiply expects a 2-D tensor")
        return Tensor(matrix @ self.data, (self,), lambda g: (matrix.T @ g,))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x)


def gelu_value(x):
    """Exact GELU, ``x * Phi(x)`` with the standard normal CDF."""
    x = np.asarray(x, dtype=np.float64)
    return x * ndtr(x)


def gelu(x):
    """GELU on a float, array or Tensor. Tensors get a recorded derivative."""
    if not isinstance(x, Tensor):
        out = gelu_value(x)
        return float(out) if out.ndim == 0 else out
    xd = x.data
    cdf = ndtr(xd)

    def backward(g):
        return (g * (cdf + xd * _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)),)

    return Tensor(xd * cdf, (x,), backward)


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, leaves: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of scalar ``loss`` with respect to each of ``leaves``."""
    if not isinstance(loss, Tensor):
        raise AutodiffError("nothing was recorded: loss is not a Tensor")
    if loss.data.size != 1:
        raise AutodiffError(f"loss must be scalar, got shape {loss.shape}")
    order = _toposort(loss)
    # only nodes downstream of a leaf carry gradient; constants are skipped
    live = {id(leaf) for leaf in leaves}
    for node in order:
        if any(id(p) in live for p in node._parents):
            live.add(id(node))
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None) if node._backward is not None else grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if id(parent) not in live:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = np.array(pg, dtype=np.float64)
    return [grads.get(id(leaf), np.zeros_like(leaf.data)) for leaf in leaves]


# network parameters -------------------------------------------------------


@dataclass(frozen=True)
class ParamSet:
    """Weights and biases of a fully connected GELU network.

    ``layers[k] = (W, b)`` with ``W`` of shape (out, in). GELU is applied
    between layers and the output layer is affine. Entries are numpy arrays,
    or :class:`Tensor` leaves for a tracked copy (see :meth:`track`).
    """

    layers: tuple

    def __post_init__(self):
        layers = tuple((w, b) for w, b in self.layers)
        object.__setattr__(self, "layers", layers)
        prev = None
        for w, b in layers:
            if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
                raise ConfigurationError("each layer needs W (out, in) and b (out,)")
            if prev is not None and w.shape[1] != prev:
                raise ConfigurationError(
                    f"layer input dim {w.shape[1]} does not match previous output {prev}"
                )
            prev = w.shape[0]

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def sizes(self) -> list[int]:
        return [self.in_dim] + [w.shape[0] for w, _ in self.layers]

    def arrays(self) -> list:
        return [a for layer in self.layers for a in layer]

    @classmethod
    def from_arrays(cls, arrays: Sequence) -> "ParamSet":
        return cls(tuple((arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2)))

    def map(self, fn: Callable) -> "ParamSet":
        return ParamSet.from_arrays([fn(a) for a in self.arrays()])

    def track(self) -> "ParamSet":
        """Copy whose arrays are Tensor leaves, for use with :func:`grad`."""
        return self.map(lambda a: Tensor(a.data if isinstance(a, Tensor) else a))

    def numpy(self) -> "ParamSet":
        return self.map(lambda a: np.array(a.data if isinstance(a, Tensor) else a))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(np.asarray(getattr(a, "data", a)))) for a in self.arrays())

    def vector_field(self) -> Callable[[np.ndarray], np.ndarray]:
        """Untracked forward pass as a plain ``u -> f(u)`` callable."""
        params = self.numpy()
        return lambda u: mlp_forward(params, u)


GradSet = ParamSet


def init_params(sizes: Sequence[int], seed: int = 0) -> ParamSet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization for weights and biases."""
    if len(sizes) < 2:
        raise ConfigurationError("need at least input and output sizes")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        layers.append((w, b))
    return ParamSet(tuple(layers))


def mlp_forward(params: ParamSet, u: np.ndarray) -> np.ndarray:
    """Fast numpy-only forward pass; ``u`` has shape (..., D)."""
    h = np.asarray(u, dtype=np.float64)
    last = len(params.layers) - 1
    for k, (w, b) in enumerate(params.layers):
        h = h @ w.T + b
        if k < last:
            h = gelu_value(h)
    return h


def mlp_apply(params: ParamSet, u):
    """Evaluate the network at ``u`` of shape (D,) or (B, D).

    Returns a Tensor (recording the computation) when ``u`` or any parameter
    is a Tensor, otherwise a numpy array.
    """
    tracked = isinstance(u, Tensor) or isinstance(params.layers[0][0], Tensor)
    shape = u.shape
    if shape[-1] != params.in_dim:
        raise ConfigurationError(f"input has dim {shape[-1]}, network expects {params.in_dim}")
    if not tracked:
        return mlp_forward(params, u)
    h = _as_tensor(u)
    if h.ndim == 1:
        h = h.reshape(1, -1)
    elif h.ndim > 2:
        h = h.reshape(-1, shape[-1])
    last = len(params.layers) - 1
    for k, (w, b) in enumerate(params.layers):
        h = h @ _as_tensor(w).T + b
        if k < last:
            h = gelu(h)
    return h.reshape(*shape[:-1], params.out_dim)


def grad(loss: Tensor, params: ParamSet) -> GradSet:
    """Reverse-mode gradient of ``loss`` with respect to tracked ``params``."""
    leaves = params.arrays()
    if not all(isinstance(a, Tensor) for a in leaves):
        raise AutodiffError("params are not tracked; call params.track() before the forward pass")
    return ParamSet.from_arrays(backward(loss, leaves))


# optimizer ----------------------------------------------------------------


@dataclass
class OptimizerState:
    m: list
    v: list
    lr: float
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: ParamSet, lr: float, **kw) -> "OptimizerState":
        zeros = [np.zeros_like(np.asarray(getattr(a, "data", a))) for a in params.arrays()]
        return cls(m=zeros, v=[z.copy() for z in zeros], lr=lr, **kw)


def adam_step(params: ParamSet, grads: GradSet, state: OptimizerState):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    g_arrays = [np.asarray(g) for g in grads.arrays()]
    p_arrays = [np.asarray(getattr(a, "data", a)) for a in params.arrays()]
    if len(g_arrays) != len(p_arrays) or any(g.shape != p.shape for g, p in zip(g_arrays, p_arrays)):
        raise ConfigurationError("gradient shapes do not match parameters")
    if not all(np.all(np.isfinite(g)) for g in g_arrays):
        raise TrainingError("non-finite gradient")
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    m = [b1 * mi + (1 - b1) * g for mi, g in zip(state.m, g_arrays)]
    v = [b2 * vi + (1 - b2) * g * g for vi, g in zip(state.v, g_arrays)]
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    new = [
        p - state.lr * (mi / c1) / (np.sqrt(vi / c2) + state.eps)
        for p, mi, vi in zip(p_arrays, m, v)
    ]
    new_state = OptimizerState(m=m, v=v, lr=state.lr, step=step, beta1=b1, beta2=b2, eps=state.eps)
    return ParamSet.from_arrays(new), new_state


# checkpoint I/O -----------------------------------------------------------


def params_to_dict(params: ParamSet, meta: dict | None = None) -> dict:
    p = params.numpy()
    return {
        "layers": [{"w": w.tolist(), "b": b.tolist()} for w, b in p.layers],
        "activation": "gelu",
        "meta": dict(meta or {}),
    }


def params_from_dict(doc: dict) -> ParamSet:
    if doc.get("activation", "gelu") != "gelu":
        raise ConfigurationError(f"unsupported activation {doc.get('activation')!r}")
    layers = tuple(
        (np.asarray(layer["w"], dtype=np.float64), np.asarray(layer["b"], dtype=np.float64))
        for layer in doc["layers"]
    )
    return ParamSet(layers)


def save_checkpoint(path, params: ParamSet, meta: dict | None = None) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params, meta)))


def load_checkpoint(path) -> tuple[ParamSet, dict]:
    doc = json.loads(Path(path).read_text())
    return params_from_dict(doc), doc.get("meta", {})
