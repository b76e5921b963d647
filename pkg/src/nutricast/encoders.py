"""Dual encoder: a patch transformer for images and a token transformer
for ingredient text, both projecting into a shared embedding space.

Image path: patchify, linear patch projection, prepended class token,
learned position embeddings, pre-block layer norm, residual transformer
blocks, class-token readout, linear projection.

Text path: token embedding lookup, learned position embeddings, residual
transformer blocks with padding masked from attention, final layer norm,
readout at the first EOS position, linear projection.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParamDict, Tensor, add_param
from .config import ModelConfig
from .errors import ContractError
from .nn import LayerNorm, Linear, TransformerBlock, padding_mask
from .vocab import eos_positions, valid_key_mask


def batch_patchify(images: np.ndarray, patch_size: int) -> np.ndarray:
    """Vectorized row-major patch extraction for (B, H, W, 3) batches."""
    if images.ndim != 4 or images.shape[3] != 3:
        raise ContractError(f"expected (B, H, W, 3) batch, got shape {images.shape}")
    b, h, w, c = images.shape
    if h % patch_size or w % patch_size:
        raise ContractError(f"image dims {h}x{w} not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    grid = images.reshape(b, gh, patch_size, gw, patch_size, c)
    return grid.transpose(0, 1, 3, 2, 4, 5).reshape(b, gh * gw, patch_size * patch_size * c)


class ImageEncoder:
    def __init__(self, params: ParamDict, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        w = config.image_width
        patch_dim = config.patch_size * config.patch_size * 3
        self.patch_proj = Linear(params, "image.patch_proj", patch_dim, w, rng)
        self.class_token = add_param(params, "image.class_token", rng.normal(0.0, 0.02, size=(w,)))
        self.pos = add_param(
            params, "image.pos", rng.normal(0.0, 0.01, size=(1 + config.n_patches, w))
        )
        self.ln_pre = LayerNorm(params, "image.ln_pre", w)
        self.blocks = [
            TransformerBlock(params, f"image.block{i}", w, config.image_heads, rng)
            for i in range(config.image_layers)
        ]
        self.proj = add_param(
            params, "image.proj", rng.normal(0.0, w**-0.5, size=(w, config.projection_dim))
        )

    def __call__(self, images: np.ndarray, collect: bool = False):
        """Encode preprocessed (B, H, W, 3) float images to (B, D).

        With ``collect`` the token Tensor feeding the last block is
        returned too. That is the deepest patch representation the
        class-token readout still attends to (the last block's own patch
        outputs are dead ends under class-token readout, so their
        gradient is identically zero); its retained gradient drives the
        heatmaps.
        """
        cfg = self.config
        if images.shape[1] != cfg.image_resolution or images.shape[2] != cfg.image_resolution:
            raise ContractError(
                f"images must be preprocessed to {cfg.image_resolution}px, got {images.shape}"
            )
        b = images.shape[0]
        patches = batch_patchify(images, cfg.patch_size)
        # collect implies activation gradients are wanted; seeding
        # requires_grad here keeps the graph alive even when every
        # parameter is frozen, since d(logit)/d(activation) exists
        # regardless of which weights train
        x = self.patch_proj(Tensor(patches, requires_grad=collect))
        cls = ad.broadcast_to(
            ad.reshape(self.class_token.tensor, (1, 1, cfg.image_width)),
            (b, 1, cfg.image_width),
        )
        x = ad.concat([cls, x], axis=1)
        x = ad.add(x, self.pos.tensor)
        x = self.ln_pre(x)
        for block in self.blocks[:-1]:
            x = block(x)
        tokens = x
        x = self.blocks[-1](x)
        readout = ad.take_per_row(x, np.zeros(b, dtype=np.int64))
        emb = ad.matmul(readout, self.proj.tensor)
        return (emb, tokens) if collect else emb


class TextEncoder:
    def __init__(self, params: ParamDict, config: ModelConfig, rng: np.random.Generator):
        if config.vocab_size < 5:
            raise ContractError("vocab_size must be set (>= specials + 1) before building encoders")
        self.config = config
        w = config.text_width
        self.token_emb = add_param(
            params, "text.token_emb", rng.normal(0.0, 0.02, size=(config.vocab_size, w))
        )
        self.pos = add_param(params, "text.pos", rng.normal(0.0, 0.01, size=(config.context_length, w)))
        self.blocks = [
            TransformerBlock(params, f"text.block{i}", w, config.text_heads, rng)
            for i in range(config.text_layers)
        ]
        self.ln_final = LayerNorm(params, "text.ln_final", w)
        self.proj = add_param(
            params, "text.proj", rng.normal(0.0, w**-0.5, size=(w, config.projection_dim))
        )

    def __call__(self, token_ids: np.ndarray, collect: bool = False):
        """Encode (B, T) token ids to (B, D); T must equal context_length.

        With ``collect`` the raw token-embedding Tensor is returned too,
        for gradient-times-input saliency.
        """
        cfg = self.config
        if token_ids.ndim != 2 or token_ids.shape[1] != cfg.context_length:
            raise ContractError(
                f"token ids must be (B, {cfg.context_length}), got {token_ids.shape}"
            )
        embedded = ad.embedding(self.token_emb.tensor, token_ids)
        if collect and not embedded.requires_grad:
            # frozen embedding table: keep the graph alive from here so
            # saliency still gets d(logit)/d(embedding); backward treats
            # the closure-less node as a leaf
            embedded.requires_grad = True
        x = ad.add(embedded, self.pos.tensor)
        mask = padding_mask(valid_key_mask(token_ids))
        for block in self.blocks:
            x = block(x, mask)
        x = self.ln_final(x)
        readout = ad.take_per_row(x, eos_positions(token_ids))
        emb = ad.matmul(readout, self.proj.tensor)
        return (emb, embedded) if collect else emb


class DualEncoder:
    """Both encoders sharing one parameter dict under image./text. prefixes."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator, params: ParamDict | None = None):
        self.config = config
        self.params: ParamDict = params if params is not None else {}
        self.image = ImageEncoder(self.params, config, rng)
        self.text = TextEncoder(self.params, config, rng)

    def encode_image(self, images: np.ndarray, collect: bool = False):
        return self.image(images, collect)

    def encode_text(self, token_ids: np.ndarray, collect: bool = False):
        return self.text(token_ids, collect)

    def freeze(self) -> None:
        for p in self.params.values():
            p.freeze()


def encoder_param_names(params: ParamDict) -> list[str]:
    return [n for n in sorted(params) if n.startswith(("image.", "text."))]
