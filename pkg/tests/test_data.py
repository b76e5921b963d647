"""Manifest ingestion with line-numbered diagnostics, and deterministic
dataset splitting."""

import json

import numpy as np
import pytest

from nutricast.data import (
    FoodItem,
    NutrientAmount,
    load_manifest,
    manifest_line,
    select_items,
    split_dataset,
)
from nutricast.errors import DomainError, IngestError

GOOD_LINES = [
    {
        "id": "item-1",
        "image_path": "images/item-1.png",
        "ingredients": "water, sugar",
        "nutrients": {"fat": {"value": 1.5, "unit": "g"}},
        "category": "beverage",
    },
    {
        "id": "item-2",
        "image_path": "/abs/item-2.png",
        "ingredients": "salt",
        "nutrients": {"fat": {"value": 0, "unit": "g"}, "sodium": {"value": 40, "unit": "mg"}},
        "category": "pantry",
    },
    {
        "id": "item-3",
        "image_path": "images/item-3.png",
        "ingredients": "",
        "nutrients": {},
        "category": "snack",
    },
]


def write_manifest(tmp_path, lines):
    path = tmp_path / "manifest.jsonl"
    text = "\n".join(json.dumps(obj) if isinstance(obj, dict) else obj for obj in lines)
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadManifest:
    def test_fixture_round_trip(self, tmp_path):
        items = load_manifest(write_manifest(tmp_path, GOOD_LINES))
        assert [it.id for it in items] == ["item-1", "item-2", "item-3"]
        assert items[0].nutrients["fat"] == NutrientAmount(1.5, "g")
        assert items[1].value_of("sodium") == 40.0
        assert items[2].ingredients == ""

    def test_relative_paths_resolved(self, tmp_path):
        items = load_manifest(write_manifest(tmp_path, GOOD_LINES))
        assert items[0].image_path == str(tmp_path / "images/item-1.png")
        assert items[1].image_path == "/abs/item-2.png"

    def test_empty_file(self, tmp_path):
        assert load_manifest(write_manifest(tmp_path, [])) == []

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestError, match="not found"):
            load_manifest(tmp_path / "nope.jsonl")

    def test_invalid_json_line_number(self, tmp_path):
        path = write_manifest(tmp_path, [GOOD_LINES[0], "{not json"])
        with pytest.raises(IngestError, match="line 2: invalid JSON"):
            load_manifest(path)

    def test_missing_field_line_number(self, tmp_path):
        broken = {k: v for k, v in GOOD_LINES[0].items() if k != "ingredients"}
        path = write_manifest(tmp_path, [GOOD_LINES[1], broken])
        with pytest.raises(IngestError, match=r"line 2: missing fields \['ingredients'\]"):
            load_manifest(path)

    def test_unknown_field_rejected(self, tmp_path):
        bad = dict(GOOD_LINES[0], extra="x")
        with pytest.raises(IngestError, match="unknown fields"):
            load_manifest(write_manifest(tmp_path, [bad]))

    def test_duplicate_id(self, tmp_path):
        path = write_manifest(tmp_path, [GOOD_LINES[0], GOOD_LINES[0]])
        with pytest.raises(IngestError, match="line 2: duplicate id 'item-1'"):
            load_manifest(path)

    def test_empty_id(self, tmp_path):
        bad = dict(GOOD_LINES[0], id="")
        with pytest.raises(IngestError, match="line 1: empty id"):
            load_manifest(write_manifest(tmp_path, [bad]))

    def test_negative_nutrient(self, tmp_path):
        bad = dict(GOOD_LINES[0], nutrients={"fat": {"value": -1, "unit": "g"}})
        with pytest.raises(IngestError, match="finite and >= 0"):
            load_manifest(write_manifest(tmp_path, [bad]))

    def test_non_numeric_value(self, tmp_path):
        bad = dict(GOOD_LINES[0], nutrients={"fat": {"value": "1", "unit": "g"}})
        with pytest.raises(IngestError, match="must be a number"):
            load_manifest(write_manifest(tmp_path, [bad]))

    def test_malformed_nutrient_object(self, tmp_path):
        bad = dict(GOOD_LINES[0], nutrients={"fat": {"value": 1}})
        with pytest.raises(IngestError, match="value and unit"):
            load_manifest(write_manifest(tmp_path, [bad]))

    def test_mixed_units_rejected(self, tmp_path):
        other = dict(GOOD_LINES[1])
        other["nutrients"] = {"fat": {"value": 2, "unit": "mg"}}
        path = write_manifest(tmp_path, [GOOD_LINES[0], other])
        with pytest.raises(IngestError, match="unit 'mg' conflicts with 'g'"):
            load_manifest(path)

    def test_non_string_field(self, tmp_path):
        bad = dict(GOOD_LINES[0], category=3)
        with pytest.raises(IngestError, match="field 'category' must be a string"):
            load_manifest(write_manifest(tmp_path, [bad]))


class TestManifestLine:
    def test_canonical_and_loadable(self, tmp_path):
        line = manifest_line(
            "a", "images/a.png", "water", {"fat": NutrientAmount(1.0, "g")}, "snack"
        )
        assert line == manifest_line(
            "a", "images/a.png", "water", {"fat": NutrientAmount(1.0, "g")}, "snack"
        )
        path = tmp_path / "m.jsonl"
        path.write_text(line + "\n", encoding="utf-8")
        items = load_manifest(path)
        assert items[0].id == "a"
        assert items[0].nutrients["fat"].value == 1.0


def make_items(n):
    return [
        FoodItem(f"i{k}", f"/img/{k}.png", "water", {}, "snack") for k in range(n)
    ]


class TestSplit:
    def test_sizes(self):
        a = split_dataset(make_items(10), ratio=0.7, seed=0)
        assert len(a.train_ids) == 7
        assert len(a.test_ids) == 3

    def test_partition(self):
        items = make_items(31)
        a = split_dataset(items, ratio=0.6, seed=4)
        ids = set(a.train_ids) | set(a.test_ids)
        assert ids == {it.id for it in items}
        assert not set(a.train_ids) & set(a.test_ids)

    def test_same_seed_reproduces(self):
        items = make_items(50)
        assert split_dataset(items, seed=3) == split_dataset(items, seed=3)

    def test_different_seeds_differ(self):
        items = make_items(1000)
        a = split_dataset(items, seed=0)
        b = split_dataset(items, seed=1)
        assert a.train_ids != b.train_ids

    def test_bad_ratio(self):
        with pytest.raises(DomainError):
            split_dataset(make_items(5), ratio=1.0)
        with pytest.raises(DomainError):
            split_dataset(make_items(5), ratio=0.0)

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            split_dataset([])

    def test_select_items_order_and_missing(self):
        items = make_items(5)
        picked = select_items(items, ("i3", "i1"))
        assert [it.id for it in picked] == ["i3", "i1"]
        with pytest.raises(DomainError):
            select_items(items, ("i9",))
