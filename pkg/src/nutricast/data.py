"""Manifest ingestion and dataset splitting.

Manifests are UTF-8 JSON lines with exactly the fields id, image_path,
ingredients, nutrients, category; nutrients map names to value/unit
objects. Validation is strict and reports the offending line number.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, IngestError

MANIFEST_FIELDS = frozenset({"id", "image_path", "ingredients", "nutrients", "category"})


@dataclass(frozen=True)
class NutrientAmount:
    value: float
    unit: str


@dataclass(frozen=True)
class FoodItem:
    id: str
    image_path: str  # absolute after ingestion
    ingredients: str
    nutrients: dict[str, NutrientAmount]
    category: str

    def value_of(self, nutrient: str) -> float:
        if nutrient not in self.nutrients:
            raise DomainError(f"item {self.id}: nutrient {nutrient!r} not annotated")
        return self.nutrients[nutrient].value


def _parse_nutrients(raw, line_no: int) -> dict[str, NutrientAmount]:
    if not isinstance(raw, dict):
        raise IngestError(f"line {line_no}: nutrients must be an object")
    out: dict[str, NutrientAmount] = {}
    for name, entry in raw.items():
        if not isinstance(entry, dict) or set(entry) != {"value", "unit"}:
            raise IngestError(
                f"line {line_no}: nutrient {name!r} must be an object with value and unit"
            )
        value = entry["value"]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise IngestError(f"line {line_no}: nutrient {name!r} value must be a number")
        value = float(value)
        if not math.isfinite(value) or value < 0:
            raise IngestError(
                f"line {line_no}: nutrient {name!r} value must be finite and >= 0, got {value}"
            )
        if not isinstance(entry["unit"], str) or not entry["unit"]:
            raise IngestError(f"line {line_no}: nutrient {name!r} unit must be a non-empty string")
        out[name] = NutrientAmount(value=value, unit=entry["unit"])
    return out


def load_manifest(path: str | Path) -> list[FoodItem]:
    """Parse and validate a JSON-lines manifest.

    Relative image paths are resolved against the manifest's directory.
    """
    p = Path(path)
    if not p.is_file():
        raise IngestError(f"manifest not found: {p}")
    base = p.parent
    items: list[FoodItem] = []
    seen_ids: set[str] = set()
    units: dict[str, tuple[str, str]] = {}  # nutrient -> (unit, first item id)
    for line_no, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise IngestError(f"line {line_no}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise IngestError(f"line {line_no}: expected a JSON object")
        missing = MANIFEST_FIELDS - set(obj)
        if missing:
            raise IngestError(f"line {line_no}: missing fields {sorted(missing)}")
        extra = set(obj) - MANIFEST_FIELDS
        if extra:
            raise IngestError(f"line {line_no}: unknown fields {sorted(extra)}")
        for key in ("id", "image_path", "ingredients", "category"):
            if not isinstance(obj[key], str):
                raise IngestError(f"line {line_no}: field {key!r} must be a string")
        item_id = obj["id"]
        if not item_id:
            raise IngestError(f"line {line_no}: empty id")
        if item_id in seen_ids:
            raise IngestError(f"line {line_no}: duplicate id {item_id!r}")
        seen_ids.add(item_id)
        nutrients = _parse_nutrients(obj["nutrients"], line_no)
        for name, amount in nutrients.items():
            if name in units and units[name][0] != amount.unit:
                prev_unit, prev_id = units[name]
                raise IngestError(
                    f"line {line_no}: nutrient {name!r} unit {amount.unit!r} conflicts "
                    f"with {prev_unit!r} (item {prev_id!r}); units are never converted"
                )
            units.setdefault(name, (amount.unit, item_id))
        image_path = Path(obj["image_path"])
        if not image_path.is_absolute():
            image_path = base / image_path
        items.append(
            FoodItem(
                id=item_id,
                image_path=str(image_path),
                ingredients=obj["ingredients"],
                nutrients=nutrients,
                category=obj["category"],
            )
        )
    return items


def manifest_line(
    item_id: str,
    image_path: str,
    ingredients: str,
    nutrients: dict[str, NutrientAmount],
    category: str,
) -> str:
    """One canonical manifest line; key order fixed for byte stability."""
    obj = {
        "id": item_id,
        "image_path": image_path,
        "ingredients": ingredients,
        "nutrients": {
            name: {"value": amt.value, "unit": amt.unit} for name, amt in sorted(nutrients.items())
        },
        "category": category,
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class SplitAssignment:
    seed: int
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "train_ids": list(self.train_ids),
            "test_ids": list(self.test_ids),
        }


def split_dataset(items: Sequence[FoodItem], ratio: float = 0.7, seed: int = 0) -> SplitAssignment:
    """Deterministic shuffle split; train size is floor(ratio * n)."""
    if not items:
        raise DomainError("cannot split an empty dataset")
    if not (0.0 < ratio < 1.0):
        raise DomainError(f"split ratio must lie in (0, 1), got {ratio}")
    ids = [item.id for item in items]
    perm = np.random.default_rng(seed).permutation(len(ids))
    n_train = int(math.floor(ratio * len(ids)))
    train = tuple(ids[i] for i in perm[:n_train])
    test = tuple(ids[i] for i in perm[n_train:])
    return SplitAssignment(seed=seed, train_ids=train, test_ids=test)


def select_items(items: Iterable[FoodItem], ids: Sequence[str]) -> list[FoodItem]:
    by_id = {item.id: item for item in items}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise DomainError(f"ids not present in dataset: {missing[:5]}")
    return [by_id[i] for i in ids]
