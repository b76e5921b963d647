"""Evaluation: one-vs-one multiclass AUCROC, relative-error buckets,
regulatory tolerance compliance, and per-category breakdowns.

The binary AUC uses the rank form of the Mann-Whitney statistic, which
equals pair counting with ties worth one half, exactly: ranks are half-
integers and their sums stay exact in double precision at any feasible
sample size.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .binning import EXCLUDED, BinningSpec, classify_value, representative_value
from .config import BENEFICIAL_NUTRIENTS, RISK_NUTRIENTS
from .data import FoodItem
from .errors import ConfigError, DomainError, UndefinedMetricError
from .model import NutrientModel, batched

BUCKETS = ("<10%", "<30%", ">=30%", "undefined")
UNCATEGORIZED = "(uncategorized)"
LOW_CONFIDENCE_MIN = 20  # categories below this count are flagged


def auc_binary(scores, positives) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie) over all pos/neg pairs."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    if s.shape != pos.shape or s.ndim != 1:
        raise DomainError("scores and labels must be equal-length vectors")
    n_pos = int(pos.sum())
    n_neg = int(pos.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC undefined without both a positive and a negative")
    ranks = rankdata(s, method="average")
    pos_rank_sum = float(ranks[pos].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass
class OvoResult:
    macro: float
    weighted: float
    pairs: dict[tuple[int, int], float] = field(default_factory=dict)
    skipped: list[tuple[int, int]] = field(default_factory=list)


def macro_auc_ovo(confidences, labels) -> OvoResult:
    """Symmetric pairwise AUC averaged over unordered class pairs.

    For classes i < j, restricted to samples of those classes:
    A(i,j) = (AUC with class-i confidence, i positive) averaged with
    (AUC with class-j confidence, j positive). Pairs missing a class are
    skipped and recorded. The weighted mean weights each pair by the
    total sample count of its two classes.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if conf.ndim != 2 or y.ndim != 1 or conf.shape[0] != y.shape[0]:
        raise DomainError(f"confidence matrix {conf.shape} does not match labels {y.shape}")
    m = conf.shape[1]
    if y.size and (y.min() < 0 or y.max() >= m):
        raise DomainError(f"labels must lie in [0, {m})")
    counts = np.bincount(y, minlength=m)
    if (counts > 0).sum() < 2:
        raise UndefinedMetricError("one-vs-one AUC needs at least two classes present")

    result = OvoResult(macro=0.0, weighted=0.0)
    values: list[float] = []
    weights: list[int] = []
    for i in range(m):
        for j in range(i + 1, m):
            if counts[i] == 0 or counts[j] == 0:
                result.skipped.append((i, j))
                continue
            mask = (y == i) | (y == j)
            a_ij = auc_binary(conf[mask, i], y[mask] == i)
            a_ji = auc_binary(conf[mask, j], y[mask] == j)
            value = (a_ij + a_ji) / 2.0
            result.pairs[(i, j)] = value
            values.append(value)
            weights.append(int(counts[i] + counts[j]))
    if not values:
        raise UndefinedMetricError("no class pair had samples of both classes")
    result.macro = float(np.mean(values))
    result.weighted = float(np.average(values, weights=weights))
    return result


def bucket_of(true_value: float, predicted_value: float) -> str:
    """Disjoint relative-error bucket; zero truth with a non-zero
    prediction has no defined denominator."""
    if true_value == 0.0:
        return "<10%" if predicted_value == 0.0 else "undefined"
    err = abs(predicted_value - true_value) / true_value
    if err < 0.10:
        return "<10%"
    if err < 0.30:
        return "<30%"
    return ">=30%"


def error_distribution(
    predicted_classes, spec: BinningSpec, true_values
) -> dict[str, float]:
    """Histogram fractions over the error buckets; sums to 1."""
    preds = np.asarray(predicted_classes, dtype=np.int64)
    vals = np.asarray(true_values, dtype=np.float64)
    if preds.shape != vals.shape or preds.ndim != 1 or preds.size == 0:
        raise DomainError("predicted classes and true values must be equal-length, non-empty")
    counts = dict.fromkeys(BUCKETS, 0)
    for cls, v in zip(preds, vals):
        counts[bucket_of(v, representative_value(spec, int(cls)))] += 1
    n = preds.size
    return {b: counts[b] / n for b in BUCKETS}


def nutrient_kind(nutrient: str) -> str | None:
    """risk, beneficial, or None when no tolerance rule applies."""
    if nutrient in RISK_NUTRIENTS:
        return "risk"
    if nutrient in BENEFICIAL_NUTRIENTS:
        return "beneficial"
    return None


def tolerance_compliance(predicted_value: float, true_value: float, kind: str) -> bool:
    """Label-tolerance rule: risk nutrients must stay under 120% of the
    true amount, beneficial ones must reach at least 80%."""
    if true_value <= 0:
        raise DomainError("tolerance rule needs a positive true value")
    if kind == "risk":
        return predicted_value < 1.20 * true_value
    if kind == "beneficial":
        return predicted_value >= 0.80 * true_value
    raise ConfigError(f"unknown nutrient kind {kind!r} (expected risk or beneficial)")


@dataclass
class ChannelEval:
    macro_auc: float
    weighted_auc: float
    n_items: int
    n_excluded: int
    error_buckets: dict[str, float]
    tolerance_pass_rate: float | None
    skipped_pairs: list[tuple[int, int]]
    per_category: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "macro_auc": self.macro_auc,
            "weighted_auc": self.weighted_auc,
            "n_items": self.n_items,
            "n_excluded": self.n_excluded,
            "error_buckets": dict(self.error_buckets),
            "tolerance_pass_rate": self.tolerance_pass_rate,
            "skipped_pairs": [list(p) for p in self.skipped_pairs],
            "per_category": self.per_category,
        }


@dataclass
class EvalReport:
    split: str
    checkpoint_digest: str
    channels: dict[str, ChannelEval] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "checkpoint_digest": self.checkpoint_digest,
            "channels": {n: c.to_dict() for n, c in sorted(self.channels.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def _channel_metrics(
    conf: np.ndarray,
    y_true: np.ndarray,
    values: np.ndarray,
    spec: BinningSpec,
    kind: str | None,
    n_excluded: int,
) -> ChannelEval:
    preds = conf.argmax(axis=1)
    ovo = macro_auc_ovo(conf, y_true)
    buckets = error_distribution(preds, spec, values)
    pass_rate = None
    if kind is not None:
        positive = values > 0
        if positive.any():
            passes = [
                tolerance_compliance(representative_value(spec, int(c)), v, kind)
                for c, v in zip(preds[positive], values[positive])
            ]
            pass_rate = float(np.mean(passes))
    return ChannelEval(
        macro_auc=ovo.macro,
        weighted_auc=ovo.weighted,
        n_items=int(y_true.size),
        n_excluded=n_excluded,
        error_buckets=buckets,
        tolerance_pass_rate=pass_rate,
        skipped_pairs=ovo.skipped,
    )


def evaluate_model(
    model: NutrientModel,
    items: Sequence[FoodItem],
    split: str,
    checkpoint_digest: str = "",
    channels: Sequence[str] | None = None,
    image_arrays: Mapping[str, np.ndarray] | None = None,
    batch_size: int = 64,
    with_categories: bool = True,
) -> EvalReport:
    """Score a model on manifest items against its training-time binning."""
    if not items:
        raise DomainError("cannot evaluate on an empty item list")
    channels = tuple(channels) if channels is not None else model.channels
    report = EvalReport(split=split, checkpoint_digest=checkpoint_digest)
    conf_all: dict[str, list[np.ndarray]] = {c: [] for c in channels}
    for chunk in batched(list(items), batch_size):
        images, tokens = model.prepare_items(chunk, image_arrays)
        image_emb, text_emb = model.embed(images, tokens)
        head_in = model.head_input(image_emb, text_emb)
        for channel in channels:
            conf_all[channel].append(model.heads[channel](head_in).data)

    categories = np.array([item.category or UNCATEGORIZED for item in items])
    for channel in channels:
        spec = model.binning[channel]
        values = np.array([item.value_of(channel) for item in items])
        y = np.array([classify_value(spec, v) for v in values], dtype=np.int64)
        keep = y != EXCLUDED
        n_excluded = int((~keep).sum())
        conf = np.concatenate(conf_all[channel], axis=0)[keep]
        y_kept, values_kept = y[keep], values[keep]
        kind = nutrient_kind(channel)
        ch_eval = _channel_metrics(conf, y_kept, values_kept, spec, kind, n_excluded)
        if with_categories:
            cats = categories[keep]
            for cat in sorted(set(cats.tolist())):
                sel = cats == cat
                try:
                    sub = _channel_metrics(
                        conf[sel], y_kept[sel], values_kept[sel], spec, kind, 0
                    )
                    entry = sub.to_dict()
                    entry.pop("per_category")
                except UndefinedMetricError as exc:
                    entry = {"error": str(exc), "n_items": int(sel.sum())}
                entry["low_confidence"] = bool(sel.sum() < LOW_CONFIDENCE_MIN)
                ch_eval.per_category[cat] = entry
        report.channels[channel] = ch_eval
    return report


def write_errors_csv(
    model: NutrientModel,
    items: Sequence[FoodItem],
    channel: str,
    predicted_classes: Sequence[int],
    path: str | Path,
) -> None:
    """Per-item prediction detail for one channel."""
    spec = model.binning[channel]
    lines = ["id,category,true_value,true_class,predicted_class,predicted_value,bucket"]
    for item, cls in zip(items, predicted_classes):
        v = item.value_of(channel)
        true_class = classify_value(spec, v)
        pred_value = representative_value(spec, int(cls))
        bucket = bucket_of(v, pred_value)
        lines.append(
            f"{item.id},{item.category},{v!r},{true_class},{int(cls)},{pred_value!r},{bucket}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
