"""Model, head, and training configuration with validated invariants."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Mapping

from .errors import ConfigError

VARIANTS = ("VF", "LF", "VLF", "VL")

# default nutrient channels, in report order
DEFAULT_CHANNELS = ("calories", "fat", "carbohydrate", "protein", "sodium")

# tolerance direction per nutrient kind: risk nutrients must not be
# understated past 120%, beneficial ones not overstated below 80%
RISK_NUTRIENTS = frozenset({"fat", "cholesterol", "sodium", "saturated_fat", "sugar"})
BENEFICIAL_NUTRIENTS = frozenset({"protein", "fiber", "vitamin_a", "vitamin_c", "vitamin_d"})


@dataclass(frozen=True)
class ModelConfig:
    """Dual-encoder architecture hyperparameters."""

    image_resolution: int = 224
    patch_size: int = 32
    image_layers: int = 12
    image_heads: int = 12
    image_width: int = 768
    text_layers: int = 12
    text_heads: int = 8
    text_width: int = 512
    context_length: int = 77
    vocab_size: int = 0
    projection_dim: int = 512
    temperature_init: float = 0.07

    def __post_init__(self):
        if self.image_resolution % self.patch_size != 0:
            raise ConfigError(
                f"image_resolution {self.image_resolution} not divisible by "
                f"patch_size {self.patch_size}"
            )
        if self.image_width % self.image_heads != 0:
            raise ConfigError("image_width must be divisible by image_heads")
        if self.text_width % self.text_heads != 0:
            raise ConfigError("text_width must be divisible by text_heads")
        if self.context_length < 3:
            raise ConfigError("context_length must be >= 3 (BOS + token + EOS)")
        if self.temperature_init <= 0:
            raise ConfigError("temperature_init must be positive")

    @property
    def grid_size(self) -> int:
        return self.image_resolution // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.grid_size * self.grid_size

    def with_vocab(self, vocab_size: int) -> "ModelConfig":
        return replace(self, vocab_size=vocab_size)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown ModelConfig fields: {sorted(unknown)}")
        return cls(**dict(d))


# desk-scale profile: small enough that gradient checks and overfit runs
# finish in minutes, patch size kept at 32 so glyph cells align to patches
TINY = ModelConfig(
    image_resolution=64,
    patch_size=32,
    image_layers=2,
    image_heads=2,
    image_width=64,
    text_layers=2,
    text_heads=2,
    text_width=64,
    context_length=32,
    projection_dim=64,
)

PRESETS: dict[str, ModelConfig] = {"tiny": TINY, "full": ModelConfig()}


@dataclass(frozen=True)
class HeadConfig:
    """Per-nutrient MLP classifier head."""

    input_dim: int
    class_count: int
    hidden: tuple[int, int] = (64, 16)

    def __post_init__(self):
        if self.class_count < 2:
            raise ConfigError(f"class_count must be >= 2, got {self.class_count}")
        if self.input_dim < 1:
            raise ConfigError("input_dim must be positive")
        if len(self.hidden) != 2 or any(h < 1 for h in self.hidden):
            raise ConfigError("hidden must be two positive layer sizes")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "HeadConfig":
        d = dict(d)
        d["hidden"] = tuple(d.get("hidden", (64, 16)))
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    """One training run: variant, channels, optimizer settings, seed."""

    variant: str = "VL"
    channels: tuple[str, ...] = DEFAULT_CHANNELS
    lr_head: float = 1e-3
    lr_encoders: float = 1e-7
    batch_size: int = 128
    epochs: int = 100
    seed: int = 0
    patience: int | None = None
    contrastive_weight: float = 0.0
    weight_decay: float = 0.0
    grad_clip: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.lr_head < 0 or self.lr_encoders < 0:
            raise ConfigError("learning rates must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.channels:
            raise ConfigError("at least one nutrient channel is required")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1 when set")
        if self.contrastive_weight < 0:
            raise ConfigError("contrastive_weight must be >= 0")

    @property
    def freezes_encoders(self) -> bool:
        return self.variant in ("VF", "LF", "VLF")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TrainConfig":
        d = dict(d)
        if "channels" in d:
            d["channels"] = tuple(d["channels"])
        return cls(**d)


def head_input_dim(variant: str, projection_dim: int) -> int:
    """Classifier input width: one embedding, or two concatenated."""
    if variant in ("VF", "LF"):
        return projection_dim
    if variant in ("VLF", "VL"):
        return 2 * projection_dim
    raise ConfigError(f"unknown variant {variant!r}")
