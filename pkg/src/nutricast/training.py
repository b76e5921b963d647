"""Training loops for the frozen-encoder and jointly fine-tuned variants.

All randomness (parameter init, epoch shuffles) flows from the run seed,
and gradient application iterates parameters in name order, so a run is
a pure function of (data, config, seed). Frozen variants compute each
item's embeddings exactly once through an embedding cache keyed by a
digest of the encoder parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, zero_grads
from .binning import EXCLUDED, BinningSpec, bin_nutrient
from .checkpoint import Checkpoint, params_digest
from .classifier import cross_entropy
from .config import ModelConfig, TrainConfig
from .contrastive import clip_loss, similarity_matrix, temperature_tensor
from .data import FoodItem
from .errors import ConfigError, ContractError, StaleCacheError, TrainingDiverged
from .model import NutrientModel, batched
from .optim import adam_step, init_adam
from .vocab import Vocabulary, build_vocabulary

ENCODER_PREFIXES = ("image.", "text.")


@dataclass
class EmbeddingCache:
    """Frozen-encoder embeddings keyed by item id."""

    encoder_digest: str
    image: dict[str, np.ndarray] = field(default_factory=dict)
    text: dict[str, np.ndarray] = field(default_factory=dict)

    def check_fresh(self, model: NutrientModel) -> None:
        current = params_digest(
            {n: p.data for n, p in model.params.items()}, ENCODER_PREFIXES
        )
        if current != self.encoder_digest:
            raise StaleCacheError(
                "embedding cache was built from different encoder parameters; recompute it"
            )

    def gather(self, ids: Sequence[str], modality: str) -> np.ndarray:
        store = self.image if modality == "image" else self.text
        missing = [i for i in ids if i not in store]
        if missing:
            raise StaleCacheError(f"embedding cache missing ids: {missing[:5]}")
        return np.stack([store[i] for i in ids])


def precompute_embeddings(
    model: NutrientModel,
    items: Sequence[FoodItem],
    image_arrays: Mapping[str, np.ndarray] | None = None,
    batch_size: int = 64,
) -> EmbeddingCache:
    """Encode every item once; frozen-encoder variants only."""
    if model.variant == "VL":
        raise ContractError("VL fine-tunes the encoders; an embedding cache would go stale")
    cache = EmbeddingCache(
        encoder_digest=params_digest(
            {n: p.data for n, p in model.params.items()}, ENCODER_PREFIXES
        )
    )
    ordered = sorted(items, key=lambda it: it.id)
    for chunk in batched(ordered, batch_size):
        images, tokens = model.prepare_items(chunk, image_arrays)
        image_emb, text_emb = model.embed(images, tokens)
        for j, item in enumerate(chunk):
            if image_emb is not None:
                cache.image[item.id] = image_emb.data[j].copy()
            if text_emb is not None:
                cache.text[item.id] = text_emb.data[j].copy()
    return cache


def compute_binning(
    items: Sequence[FoodItem], channels: Sequence[str], k_override: int | None = None
) -> tuple[dict[str, BinningSpec], dict[str, dict[str, int]]]:
    """Per-channel specs and id->label maps from training-split values."""
    specs: dict[str, BinningSpec] = {}
    labels: dict[str, dict[str, int]] = {}
    for channel in channels:
        values = np.array([item.value_of(channel) for item in items])
        channel_labels, spec = bin_nutrient(values, k_override=k_override, nutrient=channel)
        specs[channel] = spec
        labels[channel] = {item.id: int(lab) for item, lab in zip(items, channel_labels)}
    return specs, labels


def _global_norm_clip(model: NutrientModel, max_norm: float) -> None:
    grads = [p.tensor.grad for p in model.params.values() if p.tensor.grad is not None]
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale


def _apply_weight_decay(model: NutrientModel, wd: float) -> None:
    for p in model.params.values():
        if p.trainable and p.tensor.grad is not None:
            p.tensor.grad += wd * p.data


def train_model(
    train_items: Sequence[FoodItem],
    model_config: ModelConfig,
    train_config: TrainConfig,
    vocab: Vocabulary | None = None,
    binning: Mapping[str, BinningSpec] | None = None,
    labels: Mapping[str, Mapping[str, int]] | None = None,
    image_arrays: Mapping[str, np.ndarray] | None = None,
    progress: Callable[[int, float], None] | None = None,
) -> tuple[Checkpoint, NutrientModel]:
    """Fit a model on the training split and return its checkpoint.

    Vocabulary and binning default to being derived from ``train_items``;
    pass precomputed ones to evaluate against a fixed discretization.
    """
    if not train_items:
        raise ConfigError("training set is empty")
    if vocab is None:
        vocab = build_vocabulary(item.ingredients for item in train_items)
    if binning is None or labels is None:
        binning, labels = compute_binning(train_items, train_config.channels)
    else:
        binning = dict(binning)
        labels = {c: dict(m) for c, m in labels.items()}
    missing = [c for c in train_config.channels if c not in binning]
    if missing:
        raise ConfigError(f"binning specs missing for channels {missing}")

    model = NutrientModel(
        config=model_config,
        variant=train_config.variant,
        vocab=vocab,
        binning={c: binning[c] for c in train_config.channels},
        seed=train_config.seed,
    )
    if train_config.freezes_encoders:
        model.freeze_encoders()
        cache = precompute_embeddings(model, train_items, image_arrays)
    else:
        cache = None

    # per-channel training pools exclude that channel's outliers only
    pools = {
        channel: [it for it in train_items if labels[channel][it.id] != EXCLUDED]
        for channel in train_config.channels
    }
    for channel, pool in pools.items():
        if not pool:
            raise ConfigError(f"channel {channel!r}: every training item was excluded as outlier")

    opt_state = init_adam(model.params)
    lr_by_group = {"heads": train_config.lr_head, "encoders": train_config.lr_encoders}
    group_of = model.param_groups()
    rng = np.random.default_rng(train_config.seed)

    history: list[tuple[int, int, float]] = []
    step = 0
    best_epoch_loss = np.inf
    epochs_since_best = 0
    for epoch in range(train_config.epochs):
        epoch_losses: list[float] = []
        for channel in sorted(train_config.channels):
            pool = pools[channel]
            order = rng.permutation(len(pool))
            shuffled = [pool[i] for i in order]
            for chunk in batched(shuffled, train_config.batch_size):
                loss_val = _train_step(
                    model, chunk, channel, labels[channel], cache, image_arrays,
                    train_config, opt_state, lr_by_group, group_of,
                )
                if not np.isfinite(loss_val):
                    raise TrainingDiverged(
                        f"non-finite loss {loss_val} at epoch {epoch} step {step} "
                        f"(channel {channel}); lower the learning rates"
                    )
                step += 1
                history.append((epoch, step, loss_val))
                epoch_losses.append(loss_val)
        epoch_mean = float(np.mean(epoch_losses))
        if progress is not None:
            progress(epoch, epoch_mean)
        if train_config.patience is not None:
            if epoch_mean < best_epoch_loss - 1e-12:
                best_epoch_loss = epoch_mean
                epochs_since_best = 0
            else:
                epochs_since_best += 1
                if epochs_since_best >= train_config.patience:
                    break

    return Checkpoint.from_model(model, train_config, history), model


def _train_step(
    model: NutrientModel,
    chunk: Sequence[FoodItem],
    channel: str,
    channel_labels: Mapping[str, int],
    cache: EmbeddingCache | None,
    image_arrays: Mapping[str, np.ndarray] | None,
    train_config: TrainConfig,
    opt_state,
    lr_by_group: Mapping[str, float],
    group_of: Mapping[str, str],
) -> float:
    zero_grads(model.params)
    ids = [item.id for item in chunk]
    y = np.array([channel_labels[i] for i in ids], dtype=np.int64)

    if cache is not None:
        cache.check_fresh(model)
        image_emb = Tensor(cache.gather(ids, "image")) if model.needs_images() else None
        text_emb = Tensor(cache.gather(ids, "text")) if model.needs_text() else None
    else:
        images, tokens = model.prepare_items(chunk, image_arrays)
        image_emb, text_emb = model.embed(images, tokens)

    head = model.heads[channel]
    confidences = head(model.head_input(image_emb, text_emb))
    loss = cross_entropy(confidences, y)
    if train_config.contrastive_weight > 0.0:
        if model.variant != "VL":
            raise ConfigError("contrastive_weight requires the VL variant (trainable encoders)")
        sim = similarity_matrix(image_emb, text_emb)
        loss = ad.add(
            loss,
            ad.mul(clip_loss(sim, temperature_tensor(model.params)), train_config.contrastive_weight),
        )

    ad.backward(loss)
    if train_config.weight_decay > 0.0:
        _apply_weight_decay(model, train_config.weight_decay)
    if train_config.grad_clip is not None:
        _global_norm_clip(model, train_config.grad_clip)
    adam_step(model.params, opt_state, lr_by_group, group_of)
    return float(loss.item())
