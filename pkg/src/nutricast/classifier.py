"""Per-nutrient MLP classification heads and variant input assembly."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParamDict, Tensor, as_tensor
from .config import HeadConfig
from .errors import ContractError, DomainError, ShapeError
from .nn import Linear


class MLPHead:
    """Three affine layers (hidden 64 and 16 with GELU, then the class
    layer); confidences are the softmax of the final logits."""

    def __init__(
        self,
        params: ParamDict,
        prefix: str,
        config: HeadConfig,
        rng: np.random.Generator,
    ):
        self.config = config
        h1, h2 = config.hidden
        self.l1 = Linear(params, f"{prefix}.l1", config.input_dim, h1, rng)
        self.l2 = Linear(params, f"{prefix}.l2", h1, h2, rng)
        self.l3 = Linear(params, f"{prefix}.l3", h2, config.class_count, rng)

    def logits(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.config.input_dim:
            raise ShapeError(
                f"head expects input dim {self.config.input_dim}, got {x.shape}"
            )
        h = ad.gelu(self.l1(x))
        h = ad.gelu(self.l2(h))
        return self.l3(h)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.softmax_op(self.logits(x), axis=-1)


def assemble_input(variant: str, image_emb=None, text_emb=None) -> Tensor:
    """Head input per variant: VF image, LF text, VLF/VL image then text."""
    if variant == "VF":
        if image_emb is None:
            raise ContractError("variant VF requires an image embedding")
        return as_tensor(image_emb)
    if variant == "LF":
        if text_emb is None:
            raise ContractError("variant LF requires a text embedding")
        return as_tensor(text_emb)
    if variant in ("VLF", "VL"):
        if image_emb is None or text_emb is None:
            raise ContractError(f"variant {variant} requires both embeddings")
        return ad.concat([as_tensor(image_emb), as_tensor(text_emb)], axis=-1)
    raise ContractError(f"unknown variant {variant!r}")


def cross_entropy(confidences, true_classes) -> Tensor:
    """Mean negative log confidence assigned to the true class."""
    conf = as_tensor(confidences)
    if conf.ndim == 1:
        conf = ad.reshape(conf, (1, conf.shape[0]))
    classes = np.atleast_1d(np.asarray(true_classes, dtype=np.int64))
    if classes.ndim != 1 or classes.shape[0] != conf.shape[0]:
        raise ShapeError(
            f"true classes {classes.shape} do not match confidence rows {conf.shape}"
        )
    m = conf.shape[1]
    if classes.size and (classes.min() < 0 or classes.max() >= m):
        raise DomainError(f"true class out of range [0, {m})")
    picked = ad.take_per_row(conf, classes)
    return ad.neg(ad.tmean(ad.log(picked)))
