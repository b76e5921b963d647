"""Transformer building blocks composed from the autodiff primitives.

Modules register their parameters into a shared dict under dotted name
prefixes at construction time, in a deterministic order, so checkpoints
and optimizer state can address every tensor by name.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParamDict, Parameter, Tensor, add_param
from .errors import ShapeError

ATTN_MASK_VALUE = -1e9


class Linear:
    def __init__(
        self,
        params: ParamDict,
        prefix: str,
        d_in: int,
        d_out: int,
        rng: np.random.Generator,
        trainable: bool = True,
        bias: bool = True,
    ):
        self.d_in = d_in
        self.d_out = d_out
        scale = d_in**-0.5
        self.w = add_param(params, f"{prefix}.w", rng.normal(0.0, scale, size=(d_in, d_out)), trainable)
        self.b = add_param(params, f"{prefix}.b", np.zeros(d_out), trainable) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"linear expects last dim {self.d_in}, got {x.shape}")
        out = ad.matmul(x, self.w.tensor)
        return ad.add(out, self.b.tensor) if self.b is not None else out


class LayerNorm:
    def __init__(self, params: ParamDict, prefix: str, d: int, trainable: bool = True):
        self.g = add_param(params, f"{prefix}.g", np.ones(d), trainable)
        self.b = add_param(params, f"{prefix}.b", np.zeros(d), trainable)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm_op(x, self.g.tensor, self.b.tensor)


class MultiHeadAttention:
    """Bidirectional scaled dot-product attention over (B, T, W) inputs.

    ``mask`` is an additive float array broadcastable to (B, 1, 1, T);
    masked key positions carry ATTN_MASK_VALUE and vanish after softmax.
    """

    def __init__(
        self,
        params: ParamDict,
        prefix: str,
        width: int,
        heads: int,
        rng: np.random.Generator,
        trainable: bool = True,
    ):
        self.width = width
        self.heads = heads
        self.head_dim = width // heads
        self.wq = Linear(params, f"{prefix}.q", width, width, rng, trainable)
        # no key bias: a bias shared by all keys shifts each query's scores
        # by a constant, which the softmax cancels exactly, so the
        # parameter would never receive gradient
        self.wk = Linear(params, f"{prefix}.k", width, width, rng, trainable, bias=False)
        self.wv = Linear(params, f"{prefix}.v", width, width, rng, trainable)
        self.wo = Linear(params, f"{prefix}.out", width, width, rng, trainable)
        # opt-in capture of attention probabilities for inspection;
        # leave False for concurrent inference
        self.record = False
        self.last_attn: np.ndarray | None = None

    def _split(self, x: Tensor, b: int, t: int) -> Tensor:
        x = ad.reshape(x, (b, t, self.heads, self.head_dim))
        return ad.transpose(x, (0, 2, 1, 3))

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        b, t, _ = x.shape
        q = self._split(self.wq(x), b, t)
        k = self._split(self.wk(x), b, t)
        v = self._split(self.wv(x), b, t)
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), self.head_dim**-0.5)
        if mask is not None:
            scores = ad.add(scores, Tensor(mask))
        attn = ad.softmax_op(scores, axis=-1)
        if self.record:
            self.last_attn = attn.data.copy()
        ctx = ad.matmul(attn, v)
        ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, t, self.width))
        return self.wo(ctx)


class FeedForward:
    """Position-wise MLP: width -> 4*width -> width with GELU."""

    def __init__(
        self,
        params: ParamDict,
        prefix: str,
        width: int,
        rng: np.random.Generator,
        trainable: bool = True,
    ):
        self.fc = Linear(params, f"{prefix}.fc", width, 4 * width, rng, trainable)
        self.proj = Linear(params, f"{prefix}.proj", 4 * width, width, rng, trainable)

    def __call__(self, x: Tensor) -> Tensor:
        return self.proj(ad.gelu(self.fc(x)))


class TransformerBlock:
    """Pre-norm residual block: attention then feed-forward."""

    def __init__(
        self,
        params: ParamDict,
        prefix: str,
        width: int,
        heads: int,
        rng: np.random.Generator,
        trainable: bool = True,
    ):
        self.ln1 = LayerNorm(params, f"{prefix}.ln1", width, trainable)
        self.attn = MultiHeadAttention(params, f"{prefix}.attn", width, heads, rng, trainable)
        self.ln2 = LayerNorm(params, f"{prefix}.ln2", width, trainable)
        self.mlp = FeedForward(params, f"{prefix}.mlp", width, rng, trainable)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        x = ad.add(x, self.attn(self.ln1(x), mask))
        return ad.add(x, self.mlp(self.ln2(x)))


def padding_mask(valid: np.ndarray) -> np.ndarray:
    """Additive mask (B, 1, 1, T) from a boolean valid-key matrix (B, T)."""
    if valid.ndim != 2:
        raise ShapeError(f"valid matrix must be 2-d, got {valid.shape}")
    return np.where(valid, 0.0, ATTN_MASK_VALUE)[:, None, None, :]


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    norm = ad.sqrt(ad.tsum(ad.mul(x, x), axis=axis, keepdims=True))
    return ad.div(x, norm)


__all__ = [
    "ATTN_MASK_VALUE",
    "FeedForward",
    "LayerNorm",
    "Linear",
    "MultiHeadAttention",
    "TransformerBlock",
    "l2_normalize",
    "padding_mask",
    "Parameter",
]
