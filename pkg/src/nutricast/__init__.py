"""Nutrient estimation from product images and ingredient statements.

A contrastively trainable dual encoder (patch transformer over images,
token transformer over ingredient text) feeds per-nutrient MLP heads
that classify discretized nutrient amounts. The package also ships the
binning pipeline, one-vs-one AUCROC evaluation, gradient-based
interpretability, chemistry-validation closed forms, and a CLI.
"""

__version__ = "0.1.0"

from .binning import BinningSpec, bin_nutrient, classify_value, representative_value
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import HeadConfig, ModelConfig, PRESETS, TrainConfig
from .contrastive import clip_loss, cosine_similarity, info_nce_image, info_nce_text
from .data import FoodItem, load_manifest, split_dataset
from .errors import NutricastError
from .evaluation import EvalReport, auc_binary, evaluate_model, macro_auc_ovo
from .model import NutrientModel
from .training import precompute_embeddings, train_model
from .vocab import Vocabulary, build_vocabulary, tokenize

__all__ = [
    "BinningSpec",
    "Checkpoint",
    "EvalReport",
    "FoodItem",
    "HeadConfig",
    "ModelConfig",
    "NutricastError",
    "NutrientModel",
    "PRESETS",
    "TrainConfig",
    "Vocabulary",
    "auc_binary",
    "bin_nutrient",
    "build_vocabulary",
    "classify_value",
    "clip_loss",
    "cosine_similarity",
    "evaluate_model",
    "info_nce_image",
    "info_nce_text",
    "load_checkpoint",
    "load_manifest",
    "macro_auc_ovo",
    "precompute_embeddings",
    "representative_value",
    "save_checkpoint",
    "split_dataset",
    "tokenize",
    "train_model",
]
