"""Gradient-based interpretability: patch heatmaps over images and
per-token saliency over ingredient text.

The heatmap follows the gradient-weighted activation recipe applied to
the tokens entering the last image transformer block: each patch token's
activation is contracted with its own target-logit gradient, rectified,
and min-max normalized. Per-patch gradients are the weighting here
rather than their spatial mean: with a class-token readout the residual
stream is dominated by components shared across patches, and projecting
every patch onto one mean gradient direction lets that shared mass
swamp the per-patch signal. Token saliency defaults to
gradient-times-input (gradient norm at each token embedding scaled by
the embedding norm); an attention-readout alternative sits behind a
flag.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .data import FoodItem
from .errors import ContractError, DomainError
from .model import NutrientModel
from .vocab import BOS, EOS, PAD, token_strings

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Heatmap:
    grid: np.ndarray  # (g, g) floats in [0, 1]
    nutrient: str
    target_class: int

    def to_dict(self) -> dict:
        return {
            "nutrient": self.nutrient,
            "target_class": self.target_class,
            "grid": self.grid.tolist(),
        }

    @property
    def argmax_cell(self) -> int:
        return int(self.grid.argmax())


@dataclass(frozen=True)
class TokenSaliency:
    tokens: tuple[str, ...]  # full tokenizer output incl. specials
    weights: np.ndarray  # aligned; specials exactly zero
    nutrient: str
    target_class: int
    all_zero: bool = False

    def pairs(self) -> list[tuple[str, float]]:
        """Content tokens only, in sequence order."""
        special = {"<pad>", "<bos>", "<eos>"}
        return [
            (tok, float(w))
            for tok, w in zip(self.tokens, self.weights)
            if tok not in special
        ]

    def to_dict(self) -> dict:
        return {
            "nutrient": self.nutrient,
            "target_class": self.target_class,
            "tokens": list(self.tokens),
            "weights": self.weights.tolist(),
        }


def _check_target(model: NutrientModel, channel: str, target_class: int) -> None:
    m = model.head_configs[channel].class_count
    if not (0 <= target_class < m):
        raise DomainError(f"target class {target_class} out of range [0, {m}) for {channel!r}")


def _backprop_logit(model: NutrientModel, channel: str, target_class: int, collected):
    image_emb, text_emb, image_tokens, text_embedded = collected
    logits = model.heads[channel].logits(model.head_input(image_emb, text_emb))
    target = ad.take_per_row(logits, np.array([target_class]))
    ad.backward(ad.tsum(target))
    return image_tokens, text_embedded


def gradcam(
    model: NutrientModel,
    item: FoodItem,
    channel: str,
    target_class: int,
    image_arrays: Mapping[str, np.ndarray] | None = None,
) -> Heatmap:
    """Patch-grid heatmap for one item's target-class logit."""
    if not model.needs_images():
        raise ContractError(f"variant {model.variant} has no image path to explain")
    _check_target(model, channel, target_class)
    images, tokens = model.prepare_items([item], image_arrays)
    collected = model.embed(images, tokens, collect=True)
    image_tokens, _ = _backprop_logit(model, channel, target_class, collected)
    acts = image_tokens.data[0, 1:, :]  # class token excluded
    grads = image_tokens.grad[0, 1:, :]
    cam = np.maximum((acts * grads).sum(axis=1), 0.0)
    g = model.config.grid_size
    grid = cam.reshape(g, g)
    grid = grid - grid.min()
    peak = grid.max()
    if peak > 0:
        grid = grid / peak
    return Heatmap(grid=grid, nutrient=channel, target_class=target_class)


def text_saliency(
    model: NutrientModel,
    item: FoodItem,
    channel: str,
    target_class: int,
    image_arrays: Mapping[str, np.ndarray] | None = None,
    method: str = "grad_x_input",
) -> TokenSaliency:
    """Per-token weight for one item's target-class logit."""
    if not model.needs_text():
        raise ContractError(f"variant {model.variant} has no text path to explain")
    if method not in ("grad_x_input", "attention"):
        raise DomainError(f"unknown saliency method {method!r}")
    _check_target(model, channel, target_class)
    images, tokens = model.prepare_items([item], image_arrays)
    token_row = tokens[0]
    strings = tuple(token_strings(token_row, model.vocab))
    content = ~np.isin(token_row, (PAD, BOS, EOS))

    if not content.any():
        log.warning("item %s: empty ingredient text, saliency is all zero", item.id)
        return TokenSaliency(
            tokens=strings,
            weights=np.zeros(token_row.size),
            nutrient=channel,
            target_class=target_class,
            all_zero=True,
        )

    if method == "attention":
        weights = _attention_weights(model, images, tokens)
    else:
        collected = model.embed(images, tokens, collect=True)
        _, text_embedded = _backprop_logit(model, channel, target_class, collected)
        grads = text_embedded.grad[0]
        embs = text_embedded.data[0]
        weights = np.linalg.norm(grads, axis=-1) * np.linalg.norm(embs, axis=-1)

    weights = np.where(content, weights, 0.0)
    peak = weights.max()
    if peak > 0:
        weights = weights / peak
    return TokenSaliency(
        tokens=strings,
        weights=weights,
        nutrient=channel,
        target_class=target_class,
        all_zero=bool(peak == 0),
    )


def _attention_weights(model: NutrientModel, images, tokens) -> np.ndarray:
    """Mean attention from the EOS query of the last text block."""
    from .vocab import eos_positions

    last = model.encoder.text.blocks[-1].attn
    last.record = True
    try:
        model.embed(images, tokens)
    finally:
        last.record = False
    attn = last.last_attn  # (B, heads, T, T)
    eos = int(eos_positions(tokens)[0])
    return attn[0, :, eos, :].mean(axis=0)


def upsample_heatmap(heatmap: Heatmap, patch_size: int) -> np.ndarray:
    """Nearest-neighbor expansion of the patch grid to pixel resolution."""
    return np.repeat(np.repeat(heatmap.grid, patch_size, axis=0), patch_size, axis=1)


def render_overlay(image: np.ndarray, heatmap: Heatmap, alpha: float = 0.5) -> np.ndarray:
    """Alpha-blend the heatmap (red) onto the image; a zero map returns
    the image unchanged."""
    img = np.asarray(image, dtype=np.float64)
    patch = img.shape[0] // heatmap.grid.shape[0]
    field = upsample_heatmap(heatmap, patch)
    if field.shape != img.shape[:2]:
        raise ContractError(
            f"heatmap grid {heatmap.grid.shape} does not tile image {img.shape[:2]}"
        )
    blend = (alpha * field)[..., None]
    red = np.array([255.0, 0.0, 0.0])
    out = img * (1.0 - blend) + red * blend
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def render_saliency_html(sal: TokenSaliency, title: str = "") -> str:
    """Standalone HTML with opacity-coded token spans."""
    spans = []
    for tok, w in sal.pairs():
        spans.append(
            f'<span style="background-color: rgba(214, 39, 40, {w:.3f}); '
            f'padding: 0.15em 0.3em; margin: 0.1em; border-radius: 3px; '
            f'display: inline-block;">{tok}</span>'
        )
    heading = title or f"{sal.nutrient} / class {sal.target_class}"
    return (
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
        f"<title>{heading}</title></head>\n"
        "<body style=\"font-family: sans-serif; max-width: 40em; margin: 2em auto;\">\n"
        f"<h3>{heading}</h3>\n<p>\n" + "\n".join(spans) + "\n</p>\n</body></html>\n"
    )


def save_heatmap_json(heatmap: Heatmap, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(heatmap.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def save_saliency(sal: TokenSaliency, json_path: str | Path, html_path: str | Path | None = None) -> None:
    Path(json_path).write_text(
        json.dumps(sal.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if html_path is not None:
        Path(html_path).write_text(render_saliency_html(sal), encoding="utf-8")
