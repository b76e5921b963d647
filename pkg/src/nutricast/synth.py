"""Deterministic synthetic dataset with planted nutrient rules.

Each 64x64 image is a 2x2 grid of 32-pixel cells, so every glyph
occupies exactly one attention patch under the desk-scale preset. Glyph
placement, ingredient draws, and pixel noise all flow from one seeded
generator, making the output byte-stable for a given (n, seed).

The nutrient channels are wired so each modality carries a distinct
signal:

* fat: proportional to the brightness of a marker glyph that appears
  only in the image and is never listed in the text.
* sodium: linear in salt and yeast, which are listed in the text but
  never drawn.
* protein: determined by the single text-only ingredient soy.
* carbohydrate: linear in drawn-only oil and listed-only sugar, so
  resolving it needs both modalities.
* calories: linear mix of the channels above.

Ground truth that the manifest schema cannot carry (glyph cells,
brightness) is written to a side file, synth-truth.json.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import NutrientAmount, manifest_line
from .errors import DomainError
from .images import save_image

IMAGE_SIZE = 64
CELL = 32  # glyph cell edge; equals the patch size of the tiny preset
GRID = IMAGE_SIZE // CELL

# channel -> (formula description, term weights); values are exact
# linear functions of ingredient indicators and marker brightness
RULE_TABLE: dict[str, dict] = {
    "fat": {"formula": "10 * brightness * marker", "weights": {"marker": 10.0}, "unit": "g"},
    "sodium": {"formula": "3.0 * salt + 1.2 * yeast", "weights": {"salt": 3.0, "yeast": 1.2}, "unit": "mg"},
    "protein": {"formula": "4.0 * soy", "weights": {"soy": 4.0}, "unit": "g"},
    "carbohydrate": {
        "formula": "6.0 * oil + 5.0 * sugar",
        "weights": {"oil": 6.0, "sugar": 5.0},
        "unit": "g",
    },
    "calories": {
        "formula": "9 * fat + 4 * carbohydrate + 4 * protein",
        "weights": {"fat": 9.0, "carbohydrate": 4.0, "protein": 4.0},
        "unit": "kcal",
    },
}

# channel whose value requires both modalities / only the image / only the text
JOINT_CHANNEL = "carbohydrate"
IMAGE_CHANNEL = "fat"
TEXT_CHANNEL = "sodium"
SALIENCY_CHANNEL = "protein"
SALIENCY_TOKEN = "soy"

_PRESENCE = (("sugar", 0.5), ("salt", 0.5), ("yeast", 0.4), ("soy", 0.45))
_VISIBLE = (("cocoa", 0.4), ("peach", 0.35))
_P_MARKER = 0.7
_P_OIL = 0.45

_BACKGROUND = np.array([232, 230, 226], dtype=np.float64)


@dataclass(frozen=True)
class SynthItem:
    id: str
    ingredients: str
    category: str
    nutrients: dict[str, NutrientAmount]
    image: np.ndarray  # uint8 (64, 64, 3)
    truth: dict


def _cell_origin(cell: int) -> tuple[int, int]:
    return (cell // GRID) * CELL, (cell % GRID) * CELL


def _draw_square(img: np.ndarray, cell: int, half: int, color) -> None:
    y0, x0 = _cell_origin(cell)
    cy, cx = y0 + CELL // 2, x0 + CELL // 2
    img[cy - half : cy + half, cx - half : cx + half] = color


def _draw_disc(img: np.ndarray, cell: int, radius: int, color) -> None:
    y0, x0 = _cell_origin(cell)
    cy, cx = y0 + CELL // 2, x0 + CELL // 2
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]
    mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
    img[mask] = color


def _category(flags: dict[str, bool]) -> str:
    if flags["cocoa"]:
        return "snack"
    if flags["peach"]:
        return "beverage"
    return "pantry"


def _round2(x: float) -> float:
    return round(x, 2)


def generate_item(index: int, rng: np.random.Generator) -> SynthItem:
    flags = {name: bool(rng.random() < p) for name, p in _PRESENCE + _VISIBLE}
    marker = bool(rng.random() < _P_MARKER)
    # brightness on a 0.01 grid in [0.25, 1.0] so amounts round exactly
    brightness = 0.25 + 0.01 * int(rng.integers(0, 76)) if marker else 0.0
    oil = bool(rng.random() < _P_OIL)
    slots = rng.permutation(GRID * GRID)

    img = np.empty((IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.float64)
    img[:] = _BACKGROUND
    img += rng.integers(-3, 4, size=img.shape)

    marker_cell = int(slots[0]) if marker else None
    oil_cell = int(slots[1]) if oil else None
    cocoa_cell = int(slots[2]) if flags["cocoa"] else None
    peach_cell = int(slots[3]) if flags["peach"] else None
    if marker_cell is not None:
        _draw_square(img, marker_cell, 10, np.array([255.0, 40.0, 160.0]) * brightness)
    if oil_cell is not None:
        _draw_disc(img, oil_cell, 10, (240, 200, 40))
    if cocoa_cell is not None:
        _draw_square(img, cocoa_cell, 8, (120, 72, 40))
    if peach_cell is not None:
        _draw_disc(img, peach_cell, 12, (250, 160, 90))
    image = np.clip(np.rint(img), 0, 255).astype(np.uint8)

    fat = _round2(10.0 * brightness)
    sodium = _round2(3.0 * flags["salt"] + 1.2 * flags["yeast"])
    protein = _round2(4.0 * flags["soy"])
    carbohydrate = _round2(6.0 * oil + 5.0 * flags["sugar"])
    calories = _round2(9.0 * fat + 4.0 * carbohydrate + 4.0 * protein)
    nutrients = {
        "calories": NutrientAmount(calories, "kcal"),
        "carbohydrate": NutrientAmount(carbohydrate, "g"),
        "fat": NutrientAmount(fat, "g"),
        "protein": NutrientAmount(protein, "g"),
        "sodium": NutrientAmount(sodium, "mg"),
    }

    listed = ["water"] + [name for name, _ in _PRESENCE + _VISIBLE if flags[name]]
    truth = {
        "marker_cell": marker_cell,
        "brightness": brightness,
        "oil_cell": oil_cell,
        "cocoa_cell": cocoa_cell,
        "peach_cell": peach_cell,
        "flags": {**flags, "marker": marker, "oil": oil},
    }
    return SynthItem(
        id=f"synth-{index:05d}",
        ingredients=", ".join(listed),
        category=_category(flags),
        nutrients=nutrients,
        image=image,
        truth=truth,
    )


def generate_items(n: int, seed: int) -> list[SynthItem]:
    if n < 1:
        raise DomainError(f"synthetic dataset size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    return [generate_item(i, rng) for i in range(n)]


def synth_generate(n: int, seed: int, out_dir: str | Path) -> Path:
    """Write images/, manifest.jsonl, and synth-truth.json; returns the
    manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    items = generate_items(n, seed)
    lines = []
    truth = {"seed": seed, "n": n, "rules": RULE_TABLE, "items": {}}
    for item in items:
        rel = f"images/{item.id}.png"
        save_image(item.image, out / rel)
        lines.append(manifest_line(item.id, rel, item.ingredients, item.nutrients, item.category))
        truth["items"][item.id] = item.truth
    manifest_path = out / "manifest.jsonl"
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "synth-truth.json").write_text(
        json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest_path


def load_truth(out_dir: str | Path) -> dict:
    return json.loads((Path(out_dir) / "synth-truth.json").read_text(encoding="utf-8"))


def rule_value(channel: str, flags: dict[str, bool], brightness: float = 0.0) -> float:
    """Evaluate the planted rule directly; the generator's own oracle."""
    if channel == "fat":
        return _round2(10.0 * brightness)
    if channel == "sodium":
        return _round2(3.0 * flags["salt"] + 1.2 * flags["yeast"])
    if channel == "protein":
        return _round2(4.0 * flags["soy"])
    if channel == "carbohydrate":
        return _round2(6.0 * flags["oil"] + 5.0 * flags["sugar"])
    if channel == "calories":
        fat = rule_value("fat", flags, brightness)
        carb = rule_value("carbohydrate", flags, brightness)
        protein = rule_value("protein", flags, brightness)
        return _round2(9.0 * fat + 4.0 * carb + 4.0 * protein)
    raise DomainError(f"unknown synthetic channel {channel!r}")
