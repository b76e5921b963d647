"""Cosine similarity and the symmetric InfoNCE objective.

The batch similarity matrix S has rows indexed by images and columns by
texts; the matched pair sits on the diagonal. The image loss is the mean
cross-entropy of each row against its diagonal entry, the text loss is
the same computation on the transpose, and the combined loss averages
the two. Computing the text side literally on the transpose makes the
combined loss exactly symmetric in floating point.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import ParamDict, Tensor, add_param, as_tensor
from .errors import DomainError, ShapeError
from .nn import l2_normalize

TAU_MIN = 0.01
TAU_MAX = 1.0
TAU_INIT = 0.07


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Scalar cosine similarity of two embedding vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"cosine_similarity expects equal-length vectors, got {a.shape} and {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine similarity undefined for zero-norm vector")
    return float(a @ b / (na * nb))


def similarity_matrix(image_embs: Tensor, text_embs: Tensor) -> Tensor:
    """N x N cosine similarities; row i is image i against every text."""
    if image_embs.shape != text_embs.shape or image_embs.ndim != 2:
        raise ShapeError(
            f"embedding batches must share shape (N, D), got {image_embs.shape} and {text_embs.shape}"
        )
    norms_i = np.linalg.norm(image_embs.data, axis=1)
    norms_t = np.linalg.norm(text_embs.data, axis=1)
    if (norms_i == 0.0).any() or (norms_t == 0.0).any():
        raise DomainError("cosine similarity undefined for zero-norm embedding")
    a = l2_normalize(image_embs)
    b = l2_normalize(text_embs)
    return ad.matmul(a, ad.transpose(b, (1, 0)))


def _check_square(s: Tensor) -> int:
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError(f"similarity matrix must be square, got {s.shape}")
    return s.shape[0]


def _check_tau(tau) -> Tensor:
    t = as_tensor(tau)
    if t.size != 1:
        raise ShapeError("temperature must be a scalar")
    if float(t.data.reshape(-1)[0]) <= 0.0:
        raise DomainError("temperature must be positive")
    return t


def info_nce_image(s, tau=TAU_INIT) -> Tensor:
    """Mean over rows of -log softmax(S_i/tau) at the diagonal entry."""
    s = as_tensor(s)
    n = _check_square(s)
    t = _check_tau(tau)
    scaled = ad.div(s, t)
    diag = ad.take_per_row(scaled, np.arange(n))
    lse = ad.logsumexp_op(scaled, axis=-1)
    return ad.tmean(ad.sub(lse, diag))


def info_nce_text(s, tau=TAU_INIT) -> Tensor:
    """Column-wise counterpart, evaluated as the image loss of S^T."""
    s = as_tensor(s)
    _check_square(s)
    return info_nce_image(ad.transpose(s, (1, 0)), tau)


def clip_loss(s, tau=TAU_INIT) -> Tensor:
    """Average of the image-side and text-side InfoNCE losses."""
    s = as_tensor(s)
    _check_square(s)
    return ad.mul(ad.add(info_nce_image(s, tau), info_nce_text(s, tau)), 0.5)


def add_temperature(params: ParamDict, init: float = TAU_INIT):
    """Register the log-space temperature parameter."""
    if not (TAU_MIN <= init <= TAU_MAX):
        raise DomainError(f"temperature init {init} outside [{TAU_MIN}, {TAU_MAX}]")
    return add_param(params, "temperature.log_tau", np.array(math.log(init)))


def temperature_tensor(params: ParamDict) -> Tensor:
    """Clamped temperature tau = exp(clip(log_tau)); gradient flows only
    while the raw value stays inside the clamp."""
    log_tau = params["temperature.log_tau"].tensor
    return ad.exp(ad.clip(log_tau, math.log(TAU_MIN), math.log(TAU_MAX)))
