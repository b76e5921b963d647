"""Reverse-mode automatic differentiation over numpy arrays.

The graph is built eagerly: every operation returns a new Tensor that
remembers its parent tensors and a closure that maps its own gradient to
parent gradients. ``backward`` walks the graph in reverse topological
order, so gradient accumulation order is fixed by construction order and
runs are bit-reproducible.

Gradients are retained on every node that requires them, including
intermediates, which is what the interpretability code relies on.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import erf as _erf

from .errors import ContractError, DomainError, ShapeError

Array = np.ndarray

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A numpy array plus an optional gradient slot and graph linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _bw: Callable[[Array], None] | None = None,
        dtype=None,
    ):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._bw = _bw

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- graph plumbing ------------------------------------------------

    def _accumulate(self, grad: Array) -> None:
        if self.grad is None:
            self.grad = grad.astype(self.data.dtype, copy=True)
        else:
            self.grad = self.grad + grad

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None) -> Tensor:
    """Wrap ``x`` as a constant Tensor (no-op when already a Tensor)."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def constant(x, like: Tensor) -> Tensor:
    return Tensor(np.asarray(x, dtype=like.dtype))


def _make(data: Array, parents: Sequence[Tensor], bw: Callable[[Array], None]) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=tuple(parents), _bw=bw if req else None)


# ---------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bw(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def bw(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bw(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def bw(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out_data / b.data, b.shape))

    return _make(out_data, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def bw(g: Array) -> None:
        a._accumulate(-g)

    return _make(-a.data, (a,), bw)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def bw(g: Array) -> None:
        a._accumulate(g * out_data)

    return _make(out_data, (a,), bw)


def log(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.log(a.data)

    def bw(g: Array) -> None:
        a._accumulate(g / a.data)

    return _make(out_data, (a,), bw)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def bw(g: Array) -> None:
        a._accumulate(g * 0.5 / out_data)

    return _make(out_data, (a,), bw)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    out_data = a.data**p

    def bw(g: Array) -> None:
        a._accumulate(g * p * a.data ** (p - 1.0))

    return _make(out_data, (a,), bw)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes only where unclipped."""
    a = as_tensor(a)
    out_data = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)

    def bw(g: Array) -> None:
        a._accumulate(g * inside)

    return _make(out_data, (a,), bw)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def bw(g: Array) -> None:
        a._accumulate(g * mask)

    return _make(a.data * mask, (a,), bw)


def gelu(a) -> Tensor:
    """Exact Gaussian-error-linear unit: x * Phi(x)."""
    a = as_tensor(a)
    x = a.data
    phi_cdf = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    out_data = x * phi_cdf

    def bw(g: Array) -> None:
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        a._accumulate(g * (phi_cdf + x * pdf))

    return _make(out_data, (a,), bw)


# ---------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def bw(g: Array) -> None:
        a._accumulate(g.reshape(a.shape))

    return _make(out_data, (a,), bw)


def transpose(a, axes: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    inv = tuple(np.argsort(axes))

    def bw(g: Array) -> None:
        a._accumulate(g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), bw)


def broadcast_to(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    out_data = np.broadcast_to(a.data, shape)

    def bw(g: Array) -> None:
        a._accumulate(_unbroadcast(g, a.shape))

    return _make(out_data, (a,), bw)


def concat(parts: Sequence, axis: int) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g: Array) -> None:
        for p, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(start, stop)
                p._accumulate(g[tuple(index)])

    return _make(out_data, parts, bw)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g: Array) -> None:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(out_data, (a,), bw)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        n = a.shape[axis] if isinstance(axis, int) else int(np.prod([a.shape[i] for i in axis]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------
# matmul and indexing
# ---------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bw(g: Array) -> None:
        if a.requires_grad:
            ga = g @ b.data.swapaxes(-1, -2)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = a.data.swapaxes(-1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.shape))

    return _make(out_data, (a, b), bw)


def take_per_row(a, idx) -> Tensor:
    """Pick one entry (2-d input) or one row (3-d input) per leading row.

    For ``a`` of shape (N, M) returns shape (N,) with out[i] = a[i, idx[i]].
    For ``a`` of shape (B, T, W) returns (B, W) with out[i] = a[i, idx[i], :].
    """
    a = as_tensor(a)
    idx = np.asarray(idx)
    if idx.ndim != 1 or idx.shape[0] != a.shape[0]:
        raise ShapeError(f"index shape {idx.shape} does not match rows {a.shape[0]}")
    if idx.min(initial=0) < 0 or (idx.size and idx.max() >= a.shape[1]):
        raise DomainError("take_per_row index out of range")
    rows = np.arange(a.shape[0])
    out_data = a.data[rows, idx]

    def bw(g: Array) -> None:
        ga = np.zeros_like(a.data)
        np.add.at(ga, (rows, idx), g)
        a._accumulate(ga)

    return _make(out_data, (a,), bw)


def embedding(weight, ids) -> Tensor:
    """Row lookup into an embedding matrix; ids is an integer array."""
    weight = as_tensor(weight)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise DomainError(
            f"token id out of range: max {int(ids.max())} vs vocabulary {weight.shape[0]}"
        )
    out_data = weight.data[ids]

    def bw(g: Array) -> None:
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.shape[-1]))
        weight._accumulate(gw)

    return _make(out_data, (weight,), bw)


# ---------------------------------------------------------------------
# fused numerical kernels
# ---------------------------------------------------------------------


def softmax_op(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bw(g: Array) -> None:
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        a._accumulate(out_data * (g - inner))

    return _make(out_data, (a,), bw)


def logsumexp_op(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out_data = np.squeeze(m + np.log(s), axis=axis)

    def bw(g: Array) -> None:
        a._accumulate(np.expand_dims(g, axis) * (e / s))

    return _make(out_data, (a,), bw)


def layer_norm_op(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    Uses the population variance, matching the standard layer-norm
    definition. gamma and beta must have the length of the last axis.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if eps <= 0:
        raise DomainError("layer_norm eps must be positive")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm affine params must have shape ({d},), got {gamma.shape} and {beta.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    out_data = gamma.data * xhat + beta.data

    def bw(g: Array) -> None:
        reduce_axes = tuple(range(g.ndim - 1))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=reduce_axes))
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=reduce_axes))
        if x.requires_grad:
            gx_hat = g * gamma.data
            # standard layer-norm backward, derived from the chain rule
            mean_g = gx_hat.mean(axis=-1, keepdims=True)
            mean_gx = (gx_hat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv_std * (gx_hat - mean_g - xhat * mean_gx))
        _ = d

    return _make(out_data, (x, gamma, beta), bw)


# ---------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar loss through the recorded graph."""
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor loss")
    if loss.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")

    # iterative DFS: deep graphs (many stacked blocks) would overflow
    # python's recursion limit
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._bw is not None:
            node._bw(node.grad)


# ---------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------


class Parameter:
    """A named tensor with a trainable flag.

    Frozen parameters never receive gradients and are never touched by
    the optimizer, so their bytes survive any number of steps unchanged.
    """

    __slots__ = ("name", "tensor", "trainable")

    def __init__(self, name: str, data: Array, trainable: bool = True):
        self.name = name
        self.tensor = Tensor(np.asarray(data), requires_grad=trainable)
        self.trainable = trainable

    @property
    def data(self) -> Array:
        return self.tensor.data

    @data.setter
    def data(self, value: Array) -> None:
        self.tensor.data = value

    @property
    def grad(self) -> Array | None:
        return self.tensor.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tensor.shape

    def freeze(self) -> None:
        self.trainable = False
        self.tensor.requires_grad = False
        self.tensor.grad = None

    def __repr__(self) -> str:
        state = "trainable" if self.trainable else "frozen"
        return f"Parameter({self.name!r}, shape={self.shape}, {state})"


ParamDict = dict[str, Parameter]


def add_param(params: ParamDict, name: str, data: Array, trainable: bool = True) -> Parameter:
    if name in params:
        raise ContractError(f"duplicate parameter name {name!r}")
    p = Parameter(name, data, trainable)
    params[name] = p
    return p


def zero_grads(params: Mapping[str, Parameter]) -> None:
    for p in params.values():
        p.tensor.grad = None


# ---------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Parameter],
    eps: float = 1e-5,
    n_samples: int = 200,
    seed: int = 0,
    gradient_fn: Callable[[], dict[str, Array]] | None = None,
) -> float:
    """Compare analytic gradients against central finite differences.

    Samples up to ``n_samples`` coordinates across all trainable
    parameters and returns the maximum relative error
    ``|a - n| / max(|a|, |n|, 1e-8)``. Parameters must be float64.

    ``gradient_fn`` overrides the analytic gradient computation; the test
    suite uses it to verify the harness flags corrupted gradients.
    """
    if not (1e-6 <= eps <= 1e-4):
        raise DomainError(f"grad_check eps must lie in [1e-6, 1e-4], got {eps}")
    trainables = [(name, p) for name, p in sorted(params.items()) if p.trainable]
    if not trainables:
        raise ContractError("grad_check needs at least one trainable parameter")
    for name, p in trainables:
        if p.data.dtype != np.float64:
            raise ContractError(f"grad_check requires float64 parameters ({name} is {p.data.dtype})")

    if gradient_fn is None:
        zero_grads(params)
        loss = loss_fn()
        backward(loss)
        analytic = {
            name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
            for name, p in trainables
        }
    else:
        analytic = gradient_fn()

    sizes = [p.data.size for _, p in trainables]
    total = int(np.sum(sizes))
    rng = np.random.default_rng(seed)
    flat_ids = rng.choice(total, size=min(n_samples, total), replace=False)
    bounds = np.cumsum([0] + sizes)

    worst = 0.0
    for fid in np.sort(flat_ids):
        slot = int(np.searchsorted(bounds, fid, side="right") - 1)
        name, p = trainables[slot]
        local = int(fid - bounds[slot])
        flat = p.data.reshape(-1)
        orig = flat[local]
        flat[local] = orig + eps
        f_plus = loss_fn().item()
        flat[local] = orig - eps
        f_minus = loss_fn().item()
        flat[local] = orig
        numeric = (f_plus - f_minus) / (2.0 * eps)
        a = float(analytic[name].reshape(-1)[local])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, rel)
    return worst


def parameter_vector(params: Mapping[str, Parameter], only_trainable: bool = True) -> Array:
    """Flatten parameters (sorted by name) into one vector; test helper."""
    chunks: Iterable[Array] = (
        p.data.reshape(-1)
        for _, p in sorted(params.items())
        if p.trainable or not only_trainable
    )
    return np.concatenate(list(chunks)) if params else np.empty(0)
