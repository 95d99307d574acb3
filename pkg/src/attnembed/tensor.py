"""Minimal reverse-mode differentiation over float64 numpy arrays.

Every operation records its parents and a closure that maps the output
gradient onto parent gradients. ``Tensor.backward`` walks the recorded graph in
reverse topological order, accumulating additively, so a tensor used on
several paths receives the sum of its path gradients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

__all__ = [
    "Tensor",
    "GradCheckReport",
    "as_tensor",
    "matmul",
    "linear",
    "softmax_rows",
    "conv1d_valid",
    "layer_normalize",
    "concat",
    "stack",
    "gelu",
    "relu",
    "exp",
    "dropout",
    "backward",
    "finite_difference_check",
]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64, copy=True)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward_fn) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        needs = any(p.requires_grad for p in parents)
        out.requires_grad = needs
        if needs:
            out._parents = tuple(parents)
            out._backward = backward_fn
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    # -- arithmetic -------------------------------------------------------------
    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            a._accumulate(_unbroadcast(g, a.shape))
            b._accumulate(_unbroadcast(g, b.shape))

        return Tensor._result(a.data + b.data, (a, b), bw)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        a = self
        return Tensor._result(-a.data, (a,), lambda g: a._accumulate(-g))

    def __sub__(self, other) -> "Tensor":
        return self + (-as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape))

        return Tensor._result(a.data * b.data, (a, b), bw)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other
        out = a.data / b.data

        def bw(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * out / b.data, b.shape))

        return Tensor._result(out, (a, b), bw)

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        if isinstance(exponent, Tensor):
            raise TypeError("tensor exponents are not supported")
        a = self
        p = float(exponent)
        out = a.data**p

        def bw(g):
            a._accumulate(g * p * a.data ** (p - 1.0))

        return Tensor._result(out, (a,), bw)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def __rmatmul__(self, other) -> "Tensor":
        return matmul(as_tensor(other), self)

    # -- reductions and shape ---------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        out = a.data.sum(axis=axis, keepdims=keepdims)

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape))

        return Tensor._result(np.asarray(out, dtype=np.float64), (a,), bw)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[ax] for ax in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor._result(a.data.reshape(shape), (a,), lambda g: a._accumulate(g.reshape(a.shape)))

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        a = self
        return Tensor._result(a.data.transpose(axes), (a,), lambda g: a._accumulate(g.transpose(inv)))

    def swapaxes(self, i: int, j: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[i], axes[j] = axes[j], axes[i]
        return self.transpose(tuple(axes))

    @property
    def T(self) -> "Tensor":
        return self.swapaxes(-1, -2)

    def __getitem__(self, index) -> "Tensor":
        if isinstance(index, Tensor):
            index = index.data.astype(np.intp)
        a = self
        out = a.data[index]

        def bw(g):
            full = np.zeros_like(a.data)
            np.add.at(full, index, g)
            a._accumulate(full)

        return Tensor._result(np.array(out, dtype=np.float64), (a,), bw)

    def broadcast_to(self, shape) -> "Tensor":
        a = self
        out = np.broadcast_to(a.data, shape).copy()
        return Tensor._result(out, (a,), lambda g: a._accumulate(_unbroadcast(g, a.shape)))

    # -- elementwise --------------------------------------------------------------
    def exp(self) -> "Tensor":
        return exp(self)

    def backward(self, grad: np.ndarray | None = None) -> None:
        backward(self, grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._result(out, (x,), lambda g: x._accumulate(g * out))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._result(x.data * mask, (x,), lambda g: x._accumulate(g * mask))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU; smooth everywhere, which keeps gradient checks clean."""
    v = x.data
    v2 = v * v
    th = np.tanh(_GELU_C * v * (1.0 + 0.044715 * v2))
    out = 0.5 * v * (1.0 + th)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v2)
        x._accumulate(g * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * dinner))

    return Tensor._result(out, (x,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return Tensor._result(out, (a, b), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis of ``x``, folding leading axes into one."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input width {x.shape[-1]} != weight rows {weight.shape[0]}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data
    bias_t = as_tensor(bias) if bias is not None else None
    if bias_t is not None:
        out = out + bias_t.data
    out = out.reshape(lead + (weight.shape[1],))
    parents = (x, weight) if bias_t is None else (x, weight, bias_t)

    def bw(g):
        g2 = g.reshape(-1, weight.shape[1])
        if x.requires_grad:
            x._accumulate((g2 @ weight.data.T).reshape(x.shape))
        if weight.requires_grad:
            weight._accumulate(x2.T @ g2)
        if bias_t is not None and bias_t.requires_grad:
            bias_t._accumulate(g2.sum(axis=0).reshape(bias_t.shape))

    return Tensor._result(out, parents, bw)


def softmax_rows(x: Tensor, temperature: float = 1.0) -> Tensor:
    """Softmax of ``x / temperature`` along the last axis, max-subtracted."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    x = as_tensor(x)
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax_rows received non-finite input")
    z = x.data / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        x._accumulate(out * (g - dot) / temperature)

    return Tensor._result(out, (x,), bw)


def conv1d_valid(x: Tensor, weights: Tensor, bias: Tensor | float = 0.0, stride: int = 1) -> Tensor:
    """Strided valid cross-correlation over the last axis.

    ``out[..., j] = bias + sum_i weights[i] * x[..., j*stride + i]``.
    """
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    n, k = x.shape[-1], weights.shape[-1]
    if weights.ndim != 1:
        raise DimensionError(f"weights must be 1-D, got shape {weights.shape}")
    if k > n:
        raise DimensionError(f"kernel length {k} exceeds input length {n}")
    n_out = (n - k) // stride + 1
    idx = np.arange(n_out)[:, None] * stride + np.arange(k)[None, :]
    patches = x.data[..., idx]  # (..., n_out, k)
    out = patches @ weights.data + bias.data

    def bw(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            contrib = g[..., :, None] * weights.data  # (..., n_out, k)
            np.add.at(full, (..., idx), contrib)
            x._accumulate(full)
        if weights.requires_grad:
            gw = (g[..., None] * patches).reshape(-1, k).sum(axis=0)
            weights._accumulate(gw)
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.shape))

    return Tensor._result(out, (x, weights, bias), bw)


def layer_normalize(x: Tensor, gain: Tensor | None = None, offset: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit (population) variance, then affine."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gain_t = as_tensor(gain) if gain is not None else None
    offset_t = as_tensor(offset) if offset is not None else None
    out = xhat
    if gain_t is not None:
        out = out * gain_t.data
    if offset_t is not None:
        out = out + offset_t.data
    parents = [x] + [t for t in (gain_t, offset_t) if t is not None]

    def bw(g):
        if gain_t is not None and gain_t.requires_grad:
            gain_t._accumulate(_unbroadcast(g * xhat, gain_t.shape))
        if offset_t is not None and offset_t.requires_grad:
            offset_t._accumulate(_unbroadcast(g, offset_t.shape))
        if x.requires_grad:
            gh = g * gain_t.data if gain_t is not None else g
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
            x._accumulate(gx)

    return Tensor._result(out, parents, bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, sizes, axis=axis)):
            t._accumulate(piece)

    return Tensor._result(out, tensors, bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        for i, t in enumerate(tensors):
            t._accumulate(np.take(g, i, axis=axis))

    return Tensor._result(out, tensors, bw)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``rate`` is 0."""
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return Tensor._result(x.data * keep, (x,), lambda g: x._accumulate(g * keep))


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack_.append((p, False))
    return order


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Populate ``.grad`` on every requires-grad tensor reachable from ``loss``."""
    if grad is None:
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not np.all(np.isfinite(loss.data)):
            raise NumericError("backward received a non-finite loss")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    # intermediate grads are freed once propagated; leaves keep theirs
    loss._accumulate(grad)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad)
        if node._parents:
            node.grad = None


@dataclass
class GradCheckReport:
    max_relative_error: float
    worst_parameter: str | None
    per_parameter_errors: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_relative_error <= 1e-4


def finite_difference_check(
    model_loss: Callable[[], Tensor],
    params: Iterable[Tensor] | dict[str, Tensor],
    step: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    zero_tol: float = 1e-9,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    The relative error of a parameter is ``||a - n|| / max(||a||, ||n||)`` over
    its checked entries, ``a`` analytic and ``n`` numeric. Parameters whose
    analytic and numeric gradient norms are both below ``zero_tol`` (zero up to
    rounding, e.g. key biases under a softmax) are skipped, as are parameters
    with ``requires_grad`` false. ``max_entries`` subsamples large
    parameters (with ``rng``) to bound runtime.
    """
    if isinstance(params, dict):
        named = list(params.items())
    else:
        named = [(p.name or f"param{i}", p) for i, p in enumerate(params)]
    named = [(n, p) for n, p in named if p.requires_grad]

    for _, p in named:
        p.grad = None
    loss = model_loss()
    backward(loss)
    analytic = {n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for n, p in named}

    errors: dict[str, float] = {}
    for name, p in named:
        flat = p.data.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            gen = rng if rng is not None else np.random.default_rng(0)
            entries = np.sort(gen.choice(flat.size, size=max_entries, replace=False))
        ga = analytic[name].reshape(-1)[entries]
        gn = np.empty(len(entries))
        for j, i in enumerate(entries):
            orig = flat[i]
            flat[i] = orig + step
            fp = model_loss().item()
            flat[i] = orig - step
            fm = model_loss().item()
            flat[i] = orig
            gn[j] = (fp - fm) / (2.0 * step)
        scale = max(np.linalg.norm(ga), np.linalg.norm(gn))
        if scale <= zero_tol:
            continue
        errors[name] = float(np.linalg.norm(ga - gn) / scale)
    if errors:
        worst_name = max(errors, key=errors.get)
        return GradCheckReport(errors[worst_name], worst_name, errors)
    return GradCheckReport(0.0, None, errors)
