"""Reverse-mode automatic differentiation over numpy arrays.

A deliberately small tape: only the dense-vector primitives this model
family needs (matmul, broadcast add/mul, GELU, LayerNorm, temperature
softmax, dropout, Huber loss, column concat/slice, exp/reciprocal,
reductions). Gradients are exact reverse-mode, including gradients with
respect to inputs, which the attribution analyses require.

Everything preserves the input dtype: training runs in float32, the test
suite re-runs the same graph in float64 for finite-difference checks.
Numeric constants are written as Python floats so numpy's weak promotion
keeps float32 graphs in float32.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


class Tensor:
    """A node in the computation graph: a value, a grad slot, and parents."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable node.

        Raises ValueError for non-scalar roots; a seed gradient would be
        ambiguous there.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar root, got shape {self.data.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack = [(root, iter(root._parents))]
    visited.add(id(root))
    while stack:
        node, parents = stack[-1]
        advanced = False
        for parent in parents:
            if id(parent) not in visited and parent.requires_grad:
                visited.add(id(parent))
                stack.append((parent, iter(parent._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _accumulate(node: Tensor, grad: np.ndarray) -> None:
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = grad.copy() if isinstance(grad, np.ndarray) else np.asarray(grad)
    else:
        node.grad += grad


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _node(data, parents: tuple[Tensor, ...], backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=parents if needs else (),
                  _backward=backward if needs else None)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _node(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(out_data, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        _accumulate(a, -g)

    return _node(-a.data, (a,), backward)


def matmul(a, b) -> Tensor:
    """2-D matrix product; the only shape the model needs."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _node(out_data, (a, b), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * out_data)

    return _node(out_data, (a,), backward)


def reciprocal(a) -> Tensor:
    a = _as_tensor(a)
    out_data = 1.0 / a.data

    def backward(g):
        _accumulate(a, -g * out_data * out_data)

    return _node(out_data, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old_shape = a.data.shape

    def backward(g):
        _accumulate(a, g.reshape(old_shape))

    return _node(a.data.reshape(shape), (a,), backward)


def tensor_sum(a) -> Tensor:
    """Full reduction to a scalar."""
    a = _as_tensor(a)

    def backward(g):
        _accumulate(a, np.full(a.data.shape, g, dtype=a.data.dtype))

    return _node(a.data.sum(), (a,), backward)


def concat_cols(parts) -> Tensor:
    """Concatenate along the last axis."""
    parts = [_as_tensor(p) for p in parts]
    widths = [p.data.shape[-1] for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=-1)

    def backward(g):
        start = 0
        for p, w in zip(parts, widths):
            _accumulate(p, g[..., start : start + w])
            start += w

    return _node(out_data, tuple(parts), backward)


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data[..., start:stop].copy()

    def backward(g):
        full = np.zeros_like(a.data)
        full[..., start:stop] = g
        _accumulate(a, full)

    return _node(out_data, (a,), backward)


def gelu(x) -> Tensor:
    """Exact GELU, x * Phi(x), with Phi the standard normal CDF via erf."""
    x = _as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out_data = x.data * cdf

    def backward(g):
        pdf = np.exp(x.data * x.data * -0.5) * _INV_SQRT_2PI
        _accumulate(x, g * (cdf + x.data * pdf))

    return _node(out_data, (x,), backward)


def layer_norm(x, gain, offset, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift.

    (x - mean) / sqrt(var + eps) * gain + offset, with mean and biased
    variance taken over the last axis. eps guards zero variance.
    """
    x, gain, offset = _as_tensor(x), _as_tensor(gain), _as_tensor(offset)
    width = x.data.shape[-1]
    if gain.data.shape != (width,) or offset.data.shape != (width,):
        raise ValueError(
            f"gain/offset must have shape ({width},), got {gain.data.shape} and {offset.data.shape}"
        )
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out_data = xhat * gain.data + offset.data

    def backward(g):
        _accumulate(offset, _unbroadcast(g, offset.data.shape))
        _accumulate(gain, _unbroadcast(g * xhat, gain.data.shape))
        dxhat = g * gain.data
        term = dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accumulate(x, term * inv)

    return _node(out_data, (x, gain, offset), backward)


def softmax_temperature(logits, tau) -> Tensor:
    """softmax(logits / tau) over the last axis; tau may be a learnable scalar.

    Components are positive and sum to 1. tau <= 0 is a domain error.
    """
    logits = _as_tensor(logits)
    tau_t = _as_tensor(tau)
    if tau_t.data.size != 1:
        raise ValueError(f"temperature must be a scalar, got shape {tau_t.data.shape}")
    if not float(tau_t.data) > 0.0:
        raise ValueError(f"temperature must be positive, got {float(tau_t.data)}")
    scaled = mul(logits, reciprocal(tau_t))
    return _softmax_lastaxis(scaled)


def _softmax_lastaxis(z: Tensor) -> Tensor:
    shifted = z.data - z.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * s).sum(axis=-1, keepdims=True)
        _accumulate(z, s * (g - inner))

    return _node(s, (z,), backward)


def dropout(x, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Zero each element with probability p and rescale survivors by 1/(1-p).

    Identity at inference or p == 0. The mask comes from the supplied
    generator, so a fixed seed fixes the pattern.
    """
    x = _as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype)
    scale_mask = keep * (1.0 / (1.0 - p))
    out_data = x.data * scale_mask

    def backward(g):
        _accumulate(x, g * scale_mask)

    return _node(out_data, (x,), backward)


def huber_loss(pred, target, delta: float = 1.0) -> Tensor:
    """Mean Huber loss: 0.5 r^2 inside |r| <= delta, linear outside.

    target is treated as a constant; gradients flow to pred only.
    """
    pred = _as_tensor(pred)
    target_data = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.data.shape != target_data.shape:
        raise ValueError(f"pred shape {pred.data.shape} != target shape {target_data.shape}")
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    r = pred.data - target_data
    abs_r = np.abs(r)
    quad = abs_r <= delta
    elementwise = np.where(quad, 0.5 * r * r, delta * (abs_r - 0.5 * delta))
    n = max(r.size, 1)
    out_data = elementwise.sum() / n

    def backward(g):
        dr = np.where(quad, r, delta * np.sign(r))
        _accumulate(pred, dr * (g / n))

    return _node(np.asarray(out_data), (pred,), backward)


class ParamStore:
    """Ordered, named collection of trainable tensors.

    Shapes are frozen at construction; optimizer steps mutate values in
    place. Iteration order is insertion order, which fixes the checkpoint
    layout and the initialization draw order.
    """

    def __init__(self, params: dict[str, Tensor]):
        for name, t in params.items():
            if not isinstance(t, Tensor):
                raise TypeError(f"parameter {name!r} must be a Tensor")
            t.requires_grad = True
        self._params = dict(params)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    @property
    def n_params(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def copy(self, dtype=None) -> "ParamStore":
        return ParamStore(
            {
                name: Tensor(t.data.astype(dtype, copy=True) if dtype is not None else t.data.copy())
                for name, t in self._params.items()
            }
        )

    def assert_finite(self, context: str = "") -> None:
        for name, t in self._params.items():
            if not np.isfinite(t.data).all():
                where = f" {context}" if context else ""
                raise FloatingPointError(f"parameter {name!r} became non-finite{where}")
