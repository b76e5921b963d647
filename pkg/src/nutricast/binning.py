"""Discretization of continuous nutrient amounts into ordinal classes.

Procedure: values above the 0.95 empirical-CDF quantile are excluded as
outliers; zero maps to the reserved class 0; the remaining values are
sorted and cut into K equal-count classes, where K is the rounded ratio
of non-zero to zero counts. A tie run straddling a cut belongs entirely
to the lower class, so equal values always share a label. Each class
carries its median as the representative value used to turn a predicted
class back into an amount.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, DomainError

EXCLUDED = -1  # label for values beyond the outlier threshold


@dataclass(frozen=True)
class BinningSpec:
    nutrient: str
    threshold: float
    class_count: int  # K non-zero classes; total labels = K + 1
    edges: tuple[float, ...]  # upper edge (max value) of each non-zero class
    representatives: tuple[float, ...]  # r_0..r_K with r_0 = 0

    def __post_init__(self):
        if len(self.edges) != self.class_count:
            raise ContractError("one upper edge per non-zero class required")
        if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise ContractError("edges must be strictly increasing")
        if len(self.representatives) != self.class_count + 1:
            raise ContractError("need a representative for class 0 and each non-zero class")
        if self.representatives[0] != 0.0:
            raise ContractError("class 0 representative must be 0")

    def to_dict(self) -> dict:
        return {
            "nutrient": self.nutrient,
            "threshold": self.threshold,
            "class_count": self.class_count,
            "edges": list(self.edges),
            "representatives": list(self.representatives),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BinningSpec":
        return cls(
            nutrient=d["nutrient"],
            threshold=float(d["threshold"]),
            class_count=int(d["class_count"]),
            edges=tuple(d["edges"]),
            representatives=tuple(d["representatives"]),
        )


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def bin_nutrient(
    values, k_override: int | None = None, nutrient: str = ""
) -> tuple[np.ndarray, BinningSpec]:
    """Label a value vector and derive its BinningSpec.

    Returns int labels aligned to ``values``: EXCLUDED for outliers,
    0 for zero amounts, 1..K ascending otherwise.
    """
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim != 1 or vals.size == 0:
        raise DomainError("bin_nutrient needs a non-empty 1-d value vector")
    if not np.isfinite(vals).all() or (vals < 0).any():
        raise DomainError("nutrient values must be finite and non-negative")

    # smallest data value whose empirical CDF reaches 0.95; guarantees
    # at most 5% of items land above the threshold
    threshold = float(np.quantile(vals, 0.95, method="inverted_cdf"))
    labels = np.zeros(vals.size, dtype=np.int64)
    labels[vals > threshold] = EXCLUDED

    kept = labels != EXCLUDED
    nonzero_mask = kept & (vals > 0)
    n_zero = int((kept & (vals == 0)).sum())
    n_nonzero = int(nonzero_mask.sum())

    if n_nonzero == 0:
        spec = BinningSpec(nutrient, threshold, 0, (), (0.0,))
        return labels, spec

    if k_override is not None:
        if k_override < 1:
            raise ConfigError("k_override must be >= 1")
        k = k_override
    elif n_zero == 0:
        raise ConfigError(
            f"nutrient {nutrient or '?'}: no zero values, class count undefined; pass k_override"
        )
    else:
        k = max(1, _round_half_up(n_nonzero / n_zero))

    s = np.sort(vals[nonzero_mask])
    cuts = [0]
    for i in range(1, k):
        c = (i * n_nonzero) // k
        if c > cuts[-1] and s[c - 1] == s[c]:
            # cut splits a tie run: move it past the run (lower class keeps it)
            c = int(np.searchsorted(s, s[c], side="right"))
        cuts.append(max(c, cuts[-1]))
    cuts.append(n_nonzero)

    edges: list[float] = []
    reps: list[float] = [0.0]
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi <= lo:
            continue  # cut pushed past a later cut; class absorbed below
        edges.append(float(s[hi - 1]))
        reps.append(float(np.median(s[lo:hi])))
    spec = BinningSpec(nutrient, threshold, len(edges), tuple(edges), tuple(reps))

    nz = vals[nonzero_mask]
    labels[nonzero_mask] = np.searchsorted(spec.edges, nz, side="left") + 1
    return labels, spec


def classify_value(spec: BinningSpec, value: float) -> int:
    """Label a single amount under an existing spec."""
    if not np.isfinite(value) or value < 0:
        raise DomainError(f"value must be finite and non-negative, got {value}")
    if value > spec.threshold:
        return EXCLUDED
    if value == 0.0:
        return 0
    if spec.class_count == 0:
        raise DomainError("spec has no non-zero classes for a non-zero value")
    c = int(np.searchsorted(spec.edges, value, side="left")) + 1
    return min(c, spec.class_count)


def representative_value(spec: BinningSpec, label: int) -> float:
    """Amount reported for a predicted class."""
    if not (0 <= label <= spec.class_count):
        raise DomainError(f"class {label} out of range for {spec.class_count + 1} classes")
    return spec.representatives[label]


def save_specs(specs: dict[str, BinningSpec], path: str | Path) -> None:
    payload = {name: spec.to_dict() for name, spec in sorted(specs.items())}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_specs(path: str | Path) -> dict[str, BinningSpec]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return {name: BinningSpec.from_dict(d) for name, d in payload.items()}
