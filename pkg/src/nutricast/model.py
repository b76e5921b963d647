"""Full model assembly: dual encoder, temperature, and per-nutrient heads
behind one parameter dict, plus the preprocessing state needed to run
inference from raw manifest items.
"""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence

import numpy as np

from .autodiff import ParamDict, Tensor
from .binning import BinningSpec
from .classifier import MLPHead, assemble_input
from .config import HeadConfig, ModelConfig, head_input_dim
from .contrastive import add_temperature
from .data import FoodItem
from .encoders import DualEncoder
from .errors import ConfigError, ContractError
from .images import DEFAULT_PIXEL_MEAN, DEFAULT_PIXEL_STD, load_image, preprocess
from .vocab import Vocabulary, tokenize_batch


class NutrientModel:
    """A variant-specific model over a fixed vocabulary and binning."""

    def __init__(
        self,
        config: ModelConfig,
        variant: str,
        vocab: Vocabulary,
        binning: Mapping[str, BinningSpec],
        seed: int,
        pixel_mean: tuple[float, float, float] = DEFAULT_PIXEL_MEAN,
        pixel_std: tuple[float, float, float] = DEFAULT_PIXEL_STD,
    ):
        if config.vocab_size and config.vocab_size != vocab.size:
            raise ConfigError(
                f"config vocab_size {config.vocab_size} != vocabulary size {vocab.size}"
            )
        self.config = config.with_vocab(vocab.size)
        self.variant = variant
        self.vocab = vocab
        self.binning = dict(sorted(binning.items()))
        self.seed = seed
        self.pixel_mean = tuple(pixel_mean)
        self.pixel_std = tuple(pixel_std)

        for name, spec in self.binning.items():
            if spec.class_count < 1:
                raise ConfigError(
                    f"channel {name!r} has no non-zero classes; nothing to classify"
                )

        rng = np.random.default_rng(seed)
        self.params: ParamDict = {}
        self.encoder = DualEncoder(self.config, rng, self.params)
        self.temperature = add_temperature(self.params, self.config.temperature_init)
        input_dim = head_input_dim(variant, self.config.projection_dim)
        self.head_configs = {
            name: HeadConfig(input_dim=input_dim, class_count=spec.class_count + 1)
            for name, spec in self.binning.items()
        }
        self.heads = {
            name: MLPHead(self.params, f"head.{name}", cfg, rng)
            for name, cfg in self.head_configs.items()
        }

    # -- parameter bookkeeping ----------------------------------------

    @property
    def channels(self) -> tuple[str, ...]:
        return tuple(self.binning)

    def param_groups(self) -> dict[str, str]:
        """Name -> learning-rate group; heads train fast, encoders slow."""
        return {
            name: "heads" if name.startswith("head.") else "encoders"
            for name in self.params
        }

    def freeze_encoders(self) -> None:
        for name, p in self.params.items():
            if not name.startswith("head."):
                p.freeze()

    def load_state(self, tensors: Mapping[str, np.ndarray]) -> None:
        """Overwrite parameter data in place from named arrays."""
        missing = sorted(set(self.params) - set(tensors))
        extra = sorted(set(tensors) - set(self.params))
        if missing or extra:
            raise ContractError(
                f"parameter names do not match model: missing {missing[:3]}, extra {extra[:3]}"
            )
        for name, p in self.params.items():
            arr = np.asarray(tensors[name])
            if arr.shape != p.shape:
                raise ContractError(
                    f"parameter {name}: shape {arr.shape} != expected {p.shape}"
                )
            p.data = arr.astype(np.float64, copy=True)

    # -- input preparation --------------------------------------------

    def needs_images(self) -> bool:
        return self.variant != "LF"

    def needs_text(self) -> bool:
        return self.variant != "VF"

    def preprocess_images(self, raw_images: Sequence[np.ndarray]) -> np.ndarray:
        return np.stack(
            [
                preprocess(img, self.config.image_resolution, self.pixel_mean, self.pixel_std)
                for img in raw_images
            ]
        )

    def prepare_items(
        self,
        items: Sequence[FoodItem],
        image_arrays: Mapping[str, np.ndarray] | None = None,
    ) -> tuple[np.ndarray | None, np.ndarray | None]:
        """Items -> (preprocessed images, token ids); unused modality is None."""
        images = None
        tokens = None
        if self.needs_images():
            raws = [
                image_arrays[item.id] if image_arrays is not None else load_image(item.image_path)
                for item in items
            ]
            images = self.preprocess_images(raws)
        if self.needs_text():
            tokens = tokenize_batch(
                [item.ingredients for item in items], self.vocab, self.config.context_length
            )
        return images, tokens

    # -- forward paths ------------------------------------------------

    def embed(
        self,
        images: np.ndarray | None,
        tokens: np.ndarray | None,
        collect: bool = False,
    ):
        """Encode whatever the variant needs.

        Returns (image_emb, text_emb) or, with ``collect``, additionally
        the image token activations and raw text embeddings used by the
        interpretability paths.
        """
        image_emb = text_emb = image_tokens = text_embedded = None
        if self.needs_images():
            if images is None:
                raise ContractError(f"variant {self.variant} requires images")
            out = self.encoder.encode_image(images, collect=collect)
            image_emb, image_tokens = out if collect else (out, None)
        if self.needs_text():
            if tokens is None:
                raise ContractError(f"variant {self.variant} requires token ids")
            out = self.encoder.encode_text(tokens, collect=collect)
            text_emb, text_embedded = out if collect else (out, None)
        if collect:
            return image_emb, text_emb, image_tokens, text_embedded
        return image_emb, text_emb

    def head_input(self, image_emb, text_emb) -> Tensor:
        return assemble_input(self.variant, image_emb, text_emb)

    def logits(self, channel: str, images=None, tokens=None) -> Tensor:
        image_emb, text_emb = self.embed(images, tokens)
        return self.heads[self._check_channel(channel)].logits(
            self.head_input(image_emb, text_emb)
        )

    def confidences(self, channel: str, images=None, tokens=None) -> np.ndarray:
        head = self.heads[self._check_channel(channel)]
        image_emb, text_emb = self.embed(images, tokens)
        return head(self.head_input(image_emb, text_emb)).data

    def predict(
        self,
        items: Sequence[FoodItem],
        channel: str,
        image_arrays: Mapping[str, np.ndarray] | None = None,
    ) -> tuple[np.ndarray, np.ndarray]:
        """(argmax classes, confidence matrix) for manifest items."""
        images, tokens = self.prepare_items(items, image_arrays)
        conf = self.confidences(channel, images, tokens)
        return conf.argmax(axis=1), conf

    def _check_channel(self, channel: str) -> str:
        if channel not in self.heads:
            raise ConfigError(
                f"unknown nutrient channel {channel!r}; model has {sorted(self.heads)}"
            )
        return channel


def batched(seq: Sequence, size: int) -> Iterable[Sequence]:
    for i in range(0, len(seq), size):
        yield seq[i : i + size]
