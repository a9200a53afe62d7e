"""Dense numeric foundation: tensors with reverse-mode gradients, layers,
parameter sets, Adam, and finite-difference gradient verification.

Arithmetic is float64 throughout; float32 only appears at the checkpoint
boundary.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterable, Iterator, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from CFSFL.constants import OWNERS
from CFSFL.exception import ContractError, NumericError, ShapeError

GradSet = Dict[str, np.ndarray]

_SIG_LO = np.finfo(np.float64).tiny
_SIG_HI = 1.0 - np.finfo(np.float64).epsneg


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A float64 array that remembers how it was computed.

    Leaves created by a ``ParamSet`` have ``requires_grad=True``; every other
    leaf is a constant. Interior nodes keep their parents and a closure that
    maps the upstream gradient to one gradient per parent.
    """

    __slots__ = ("data", "requires_grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._op = ""

    @classmethod
    def from_op(cls, data, parents: Sequence["Tensor"], backward, op: str = "") -> "Tensor":
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out._op = op
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    # arithmetic

    def __add__(self, other) -> "Tensor":
        other = _lift(other)
        a, b = self, other
        return Tensor.from_op(
            a.data + b.data, (a, b),
            lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)), "add")

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other) -> "Tensor":
        return self + (-_lift(other))

    def __rsub__(self, other) -> "Tensor":
        return _lift(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = _lift(other)
        a, b = self, other
        return Tensor.from_op(
            a.data * b.data, (a, b),
            lambda g: (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)), "mul")

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = _lift(other)
        a, b = self, other
        out = a.data / b.data
        return Tensor.from_op(
            out, (a, b),
            lambda g: (_reduce_to(g / b.data, a.shape), _reduce_to(-g * out / b.data, b.shape)), "div")

    def __matmul__(self, other) -> "Tensor":
        other = _lift(other)
        a, b = self, other
        if a.ndim != 2 or b.ndim != 2:
            raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
        return Tensor.from_op(
            a.data @ b.data, (a, b),
            lambda g: (g @ b.data.T, a.data.T @ g), "matmul")

    def square(self) -> "Tensor":
        x = self.data
        return Tensor.from_op(x * x, (self,), lambda g: (2.0 * x * g,), "square")

    # reductions

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor.from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward, "sum")

    def mean(self, axis: Optional[int] = None) -> "Tensor":
        count = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis) * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        old = self.shape
        return Tensor.from_op(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),), "reshape")

    # elementwise

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor.from_op(out, (self,), lambda g: (g * out,), "exp")

    def log(self) -> "Tensor":
        x = self.data
        return Tensor.from_op(np.log(x), (self,), lambda g: (g / x,), "log")

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return Tensor.from_op(out, (self,), lambda g: (g * (1.0 - out * out),), "tanh")

    def relu(self) -> "Tensor":
        mask = self.data > 0
        return Tensor.from_op(self.data * mask, (self,), lambda g: (g * mask,), "relu")

    def sigmoid(self) -> "Tensor":
        # clipped so the value stays strictly inside (0, 1)
        out = np.clip(expit(self.data), _SIG_LO, _SIG_HI)
        return Tensor.from_op(out, (self,), lambda g: (g * out * (1.0 - out),), "sigmoid")

    def log_sigmoid(self) -> "Tensor":
        x = self.data
        return Tensor.from_op(-np.logaddexp(0.0, -x), (self,), lambda g: (g * expit(-x),), "log_sigmoid")

    def softmax(self, axis: int = -1) -> "Tensor":
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=axis, keepdims=True)
        return Tensor.from_op(
            out, (self,),
            lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),), "softmax")

    def log_softmax(self, axis: int = -1) -> "Tensor":
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        probs = np.exp(out)
        return Tensor.from_op(
            out, (self,),
            lambda g: (g - probs * g.sum(axis=axis, keepdims=True),), "log_softmax")

    def l2_normalize(self, axis: int = -1) -> "Tensor":
        """Rows scaled to unit norm; all-zero rows stay zero with zero gradient."""
        x = self.data
        norm = np.sqrt((x * x).sum(axis=axis, keepdims=True))
        safe = np.where(norm > 0, norm, 1.0)
        out = np.where(norm > 0, x / safe, 0.0)

        def backward(g):
            proj = (g * out).sum(axis=axis, keepdims=True)
            return (np.where(norm > 0, (g - out * proj) / safe, 0.0),)

        return Tensor.from_op(out, (self,), backward, "l2_normalize")


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


class Activation(str, Enum):
    TANH = "tanh"
    RELU = "relu"
    SIGMOID = "sigmoid"
    SOFTMAX = "softmax"
    IDENTITY = "identity"


def activate(x: Tensor, activation) -> Tensor:
    activation = Activation(activation)
    if activation is Activation.TANH:
        return x.tanh()
    if activation is Activation.RELU:
        return x.relu()
    if activation is Activation.SIGMOID:
        return x.sigmoid()
    if activation is Activation.SOFTMAX:
        return x.softmax(axis=-1)
    return x


def forward_layer(input: Tensor, weights: Tensor, bias: Tensor, activation="identity") -> Tensor:
    """activation(input @ W + b) for a batch of row vectors."""
    input, weights, bias = _lift(input), _lift(weights), _lift(bias)
    if input.shape[-1] != weights.shape[0]:
        raise ShapeError(f"layer input width {input.shape[-1]} does not match weights {weights.shape}")
    if bias.shape[-1] != weights.shape[1]:
        raise ShapeError(f"bias {bias.shape} does not match weights {weights.shape}")
    if not np.all(np.isfinite(input.data)):
        raise NumericError("non-finite layer input")
    squeeze = input.ndim == 1
    if squeeze:
        input = input.reshape(1, -1)
    out = activate(input @ weights + bias, activation)
    return out.reshape(-1) if squeeze else out


def init_dense(fan_in: int, fan_out: int, activation, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    if Activation(activation) is Activation.RELU:
        limit = np.sqrt(6.0 / fan_in)
    else:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out)


class ParamSet(Mapping[str, Tensor]):
    """Ordered, uniquely named trainable tensors tagged with an owner."""

    def __init__(self):
        self._tensors: Dict[str, Tensor] = {}
        self._owners: Dict[str, str] = {}

    def add(self, name: str, owner: str, value) -> Tensor:
        if name in self._tensors:
            raise ContractError(f"duplicate parameter name {name!r}")
        if owner not in OWNERS:
            raise ContractError(f"unknown owner tag {owner!r}")
        tensor = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._tensors[name] = tensor
        self._owners[name] = owner
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def owner(self, name: str) -> str:
        return self._owners[name]

    def names(self, owners: Optional[Iterable[str]] = None) -> list:
        if owners is None:
            return list(self._tensors)
        owners = set(owners)
        return [n for n in self._tensors if self._owners[n] in owners]

    def frozen(self, owners: Iterable[str]) -> Dict[str, Tensor]:
        """View in which the listed owners' tensors are constants."""
        owners = set(owners)
        return {
            n: Tensor(t.data, name=n) if self._owners[n] in owners else t
            for n, t in self._tensors.items()
        }

    def arrays(self) -> Dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._tensors.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        for name, value in arrays.items():
            if name not in self._tensors:
                raise ContractError(f"unknown parameter {name!r}")
            if self._tensors[name].shape != np.shape(value):
                raise ShapeError(f"{name}: expected {self._tensors[name].shape}, got {np.shape(value)}")
            self._tensors[name].data = np.array(value, dtype=np.float64)

    def copy(self) -> "ParamSet":
        out = ParamSet()
        for name, tensor in self._tensors.items():
            out.add(name, self._owners[name], tensor.data.copy())
        return out


def _topological_order(root: Tensor) -> list:
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Mapping[str, Tensor]) -> GradSet:
    """Exact reverse-mode gradients of a scalar with respect to ``params``.

    Parameters the loss does not reach get zero gradients.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise NumericError("loss is not finite")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    if loss.requires_grad:
        for node in reversed(_topological_order(loss)):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    return {
        name: np.array(grads[id(t)], dtype=np.float64).reshape(t.shape) if id(t) in grads else np.zeros_like(t.data)
        for name, t in params.items()
    }


def grad_check(scalar_fn: Callable[[], Tensor], params: ParamSet, eps: float = 1e-5,
               names: Optional[Iterable[str]] = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``scalar_fn`` is called with no arguments and must read the current
    values of ``params``; any sampling noise inside it has to be fixed.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    names = list(params) if names is None else list(names)

    loss = scalar_fn()
    if float(scalar_fn().item()) != float(loss.item()):
        raise ContractError("scalar_fn is not deterministic; fix its noise inputs")
    analytic = backward(loss, {n: params[n] for n in names})

    worst = 0.0
    for name in names:
        data = params[name].data
        flat = data.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            plus = scalar_fn().item()
            flat[i] = original - eps
            minus = scalar_fn().item()
            flat[i] = original
            numeric = (plus - minus) / (2.0 * eps)
            a = analytic[name].reshape(-1)[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst


@dataclass
class AdamState:
    names: list
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamSet, names: Iterable[str], **hyper) -> "AdamState":
        names = list(names)
        state = cls(names=names, **hyper)
        for n in names:
            state.m[n] = np.zeros_like(params[n].data)
            state.v[n] = np.zeros_like(params[n].data)
        return state


def adam_step(params: ParamSet, grads: GradSet, state: AdamState) -> AdamState:
    """Bias-corrected Adam update, in place, on the names ``state`` owns."""
    for n in state.names:
        g = grads[n]
        if g.shape != params[n].shape:
            raise ShapeError(f"gradient for {n} has shape {g.shape}, parameter has {params[n].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {n}")

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    step_size = state.lr / bc1

    for n in state.names:
        g = grads[n]
        state.m[n] *= state.beta1
        state.m[n] += (1.0 - state.beta1) * g
        state.v[n] *= state.beta2
        state.v[n] += (1.0 - state.beta2) * (g * g)
        denom = np.sqrt(state.v[n] / bc2) + state.epsilon
        params[n].data -= step_size * state.m[n] / denom
    return state
