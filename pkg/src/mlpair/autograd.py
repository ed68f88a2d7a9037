"""Dense float64 tensors with reverse-mode differentiation.

Every op is a :class:`Function` subclass with a ``forward`` on raw arrays and a
``backward`` that maps the output gradient to one gradient per input. Outputs
are checked for NaN/Inf after every op.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterator, Sequence

import numpy as np

_GRAD_ENABLED = True

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
GELU_CUBIC = 0.044715


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(ArithmeticError):
    """An op produced NaN or Inf."""


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_ctx")

    def __init__(self, data, requires_grad: bool = False, _ctx: "Function | None" = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._ctx = _ctx

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor / tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad.

        Intermediate tensors get their gradient overwritten; leaves accumulate
        across calls, so zero them between optimizer steps.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._ctx is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            node.grad = g
            in_grads = node._ctx.backward(g)
            for inp, ig in zip(node._ctx.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node._ctx is not None:
            for inp in node._ctx.inputs:
                if inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Function:
    """One differentiable op. Subclasses store whatever backward needs on ``self``."""

    inputs: tuple[Tensor, ...]

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[np.ndarray | None]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        fn = cls()
        fn.inputs = tuple(as_tensor(t) for t in inputs)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            out = fn.forward(*(t.data for t in fn.inputs), **kwargs)
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"{cls.__name__} produced a non-finite value")
        needs_grad = _GRAD_ENABLED and any(t.requires_grad for t in fn.inputs)
        return Tensor(out, requires_grad=needs_grad, _ctx=fn if needs_grad else None)


class Add(Function):
    def forward(self, a, b):
        try:
            return a + b
        except ValueError:
            raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from None

    def backward(self, grad):
        a, b = self.inputs
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)


class Sub(Function):
    def forward(self, a, b):
        try:
            return a - b
        except ValueError:
            raise ShapeError(f"cannot subtract shapes {a.shape} and {b.shape}") from None

    def backward(self, grad):
        a, b = self.inputs
        return _unbroadcast(grad, a.shape), _unbroadcast(-grad, b.shape)


class Mul(Function):
    def forward(self, a, b):
        try:
            return a * b
        except ValueError:
            raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}") from None

    def backward(self, grad):
        a, b = self.inputs
        return _unbroadcast(grad * b.data, a.shape), _unbroadcast(grad * a.data, b.shape)


class MatMul(Function):
    """Batched ``a @ b`` over the last two axes with numpy broadcasting."""

    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        return a @ b

    def backward(self, grad):
        a, b = self.inputs
        ga = grad @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ grad
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


class Affine(Function):
    """``x @ w + b`` acting on the last axis of ``x``; ``w`` is [K, J], ``b`` is [J]."""

    def forward(self, x, w, b):
        if w.ndim != 2 or x.ndim < 1 or x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
            raise ShapeError(f"affine shape mismatch: x{x.shape} w{w.shape} b{b.shape}")
        return x @ w + b

    def backward(self, grad):
        x, w, _ = self.inputs
        gx = grad @ w.data.T
        g2 = grad.reshape(-1, grad.shape[-1])
        gw = x.data.reshape(-1, x.shape[-1]).T @ g2
        gb = g2.sum(axis=0)
        return gx, gw, gb


class Permute(Function):
    def forward(self, x, axes):
        self.axes = tuple(axes)
        return np.ascontiguousarray(np.transpose(x, self.axes))

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class Reshape(Function):
    def forward(self, x, shape):
        self.in_shape = x.shape
        try:
            return x.reshape(shape)
        except ValueError:
            raise ShapeError(f"cannot reshape {x.shape} to {shape}") from None

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class LayerNorm(Function):
    def forward(self, x, gamma, beta, eps):
        d = x.shape[-1] if x.ndim else 0
        if d == 0:
            raise ShapeError("layer_norm over an empty axis")
        if gamma.shape != (d,) or beta.shape != (d,):
            raise ShapeError(f"layer_norm params {gamma.shape}/{beta.shape} do not match axis {d}")
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.xhat = xc * self.inv_std
        return self.xhat * gamma + beta

    def backward(self, grad):
        _, gamma, _ = self.inputs
        xhat, inv_std = self.xhat, self.inv_std
        g_gamma = (grad * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
        g_beta = grad.reshape(-1, grad.shape[-1]).sum(axis=0)
        gxhat = grad * gamma.data
        gx = inv_std * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, g_gamma, g_beta


class Gelu(Function):
    """tanh approximation: 0.5·x·(1 + tanh(√(2/π)(x + 0.044715x³)))."""

    def forward(self, x):
        self.x = x
        self.t = np.tanh(SQRT_2_OVER_PI * x * (1.0 + GELU_CUBIC * x * x))
        return 0.5 * x * (1.0 + self.t)

    def backward(self, grad):
        x, t = self.x, self.t
        du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
        return (grad * d,)


class Relu(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad):
        return (grad * self.mask,)


class Dropout(Function):
    def forward(self, x, mask):
        self.mask = mask
        return x * mask

    def backward(self, grad):
        return (grad * self.mask,)


class Sum(Function):
    def forward(self, x, axis):
        self.in_shape = x.shape
        self.axis = axis
        return np.asarray(x.sum(axis=axis))

    def backward(self, grad):
        if self.axis is None:
            return (np.broadcast_to(grad, self.in_shape).copy(),)
        return (np.broadcast_to(np.expand_dims(grad, self.axis), self.in_shape).copy(),)


class Mean(Function):
    def forward(self, x, axis):
        self.in_shape = x.shape
        self.axis = axis
        self.n = x.shape[axis]
        return x.mean(axis=axis)

    def backward(self, grad):
        g = np.expand_dims(grad, self.axis) / self.n
        return (np.broadcast_to(g, self.in_shape).copy(),)


class Max(Function):
    """Max along one axis; the gradient goes to the first maximal index."""

    def forward(self, x, axis):
        self.axis = axis
        self.in_shape = x.shape
        self.idx = np.argmax(x, axis=axis)
        return np.take_along_axis(x, np.expand_dims(self.idx, axis), axis=axis).squeeze(axis)

    def backward(self, grad):
        out = np.zeros(self.in_shape)
        np.put_along_axis(out, np.expand_dims(self.idx, self.axis), np.expand_dims(grad, self.axis), axis=self.axis)
        return (out,)


class Softmax(Function):
    def forward(self, x):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        self.p = e / e.sum(axis=-1, keepdims=True)
        return self.p

    def backward(self, grad):
        p = self.p
        return (p * (grad - (grad * p).sum(axis=-1, keepdims=True)),)


class SoftmaxCrossEntropy(Function):
    def forward(self, logits, labels):
        if logits.ndim != 2:
            raise ShapeError(f"cross-entropy expects [B, C] logits, got {logits.shape}")
        b, c = logits.shape
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if labels.shape != (b,):
            raise ShapeError(f"{labels.shape[0]} labels for {b} rows")
        if b == 0:
            raise ShapeError("cross-entropy over an empty batch")
        if labels.min() < 0 or labels.max() >= c:
            raise ValueError(f"label out of range [0, {c})")
        z = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        self.p = np.exp(z - lse[:, None])
        self.labels = labels
        return np.asarray(np.mean(lse - z[np.arange(b), labels]))

    def backward(self, grad):
        g = self.p.copy()
        g[np.arange(len(self.labels)), self.labels] -= 1.0
        return (g * (grad / len(self.labels)),)


# functional surface


def add(a, b) -> Tensor:
    return Add.apply(as_tensor(a), as_tensor(b))


def sub(a, b) -> Tensor:
    return Sub.apply(as_tensor(a), as_tensor(b))


def mul(a, b) -> Tensor:
    return Mul.apply(as_tensor(a), as_tensor(b))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return Affine.apply(x, w, b)


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    return Permute.apply(x, axes=axes)


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return permute(x, axes)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise ValueError("eps must be positive")
    return LayerNorm.apply(x, gamma, beta, eps=eps)


def gelu(x: Tensor) -> Tensor:
    return Gelu.apply(x)


def relu(x: Tensor) -> Tensor:
    return Relu.apply(x)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) so eval mode is the identity."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs a seeded generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return Dropout.apply(x, mask=mask)


def reduce(x: Tensor, axis: int, kind: str = "mean") -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} invalid for shape {x.shape}")
    axis %= x.ndim
    if kind == "mean":
        return Mean.apply(x, axis=axis)
    if kind == "max":
        return Max.apply(x, axis=axis)
    raise ValueError(f"unknown reduction {kind!r}")


def mean(x: Tensor, axis: int) -> Tensor:
    return reduce(x, axis, "mean")


def amax(x: Tensor, axis: int) -> Tensor:
    return reduce(x, axis, "max")


def sum_all(x: Tensor) -> Tensor:
    return Sum.apply(x, axis=None)


def softmax(x: Tensor) -> Tensor:
    return Softmax.apply(x)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    return SoftmaxCrossEntropy.apply(logits, labels=labels)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5, floor: float = 1e-3) -> float:
    """Worst elementwise relative error between reverse-mode and central differences.

    ``x`` is perturbed in place and restored, so ``f`` may ignore its argument
    and read ``x`` through a closure (that is how parameters are checked).
    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if not 1e-6 <= h <= 1e-4:
        raise ValueError(f"step {h} outside [1e-6, 1e-4]")
    saved_grad, saved_flag = x.grad, x.requires_grad
    x.grad = None
    x.requires_grad = True
    try:
        y = f(x)
        if y.data.size != 1:
            raise ShapeError(f"grad_check needs a scalar function, got shape {y.shape}")
        y.backward()
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
        numeric = np.zeros_like(x.data)
        flat = x.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = f(x).item()
                flat[i] = orig - h
                fm = f(x).item()
                flat[i] = orig
                num_flat[i] = (fp - fm) / (2.0 * h)
    finally:
        x.grad, x.requires_grad = saved_grad, saved_flag
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
