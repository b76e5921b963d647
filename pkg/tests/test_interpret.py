"""Interpretability outputs: heatmap normalization and invariances, token
saliency masking of special tokens, and the rendering helpers."""

import json
import logging

import numpy as np
import pytest

from nutricast.config import TINY
from nutricast.data import FoodItem
from nutricast.errors import ContractError, DomainError
from nutricast.interpret import (
    Heatmap,
    gradcam,
    render_overlay,
    render_saliency_html,
    save_heatmap_json,
    save_saliency,
    text_saliency,
    upsample_heatmap,
)
from nutricast.model import NutrientModel
from nutricast.synth import generate_items
from nutricast.training import compute_binning
from nutricast.vocab import build_vocabulary

# frozen output of the untrained seed-0 joint model on synth-00000;
# guards the whole image path end to end against silent drift
GOLDEN_GRID = np.array(
    [
        [0.48621128703077543, 0.5270865594368279],
        [0.0, 1.0],
    ]
)


@pytest.fixture(scope="module")
def setup():
    synth = generate_items(24, seed=17)
    items = [
        FoodItem(s.id, f"mem://{s.id}", s.ingredients, s.nutrients, s.category)
        for s in synth
    ]
    images = {s.id: s.image for s in synth}
    vocab = build_vocabulary([it.ingredients for it in items], min_frequency=1)
    specs, _ = compute_binning(items, ("fat",))
    model = NutrientModel(TINY, "VL", vocab, specs, seed=0)
    return model, items, images


class TestHeatmap:
    def test_grid_shape_and_range(self, setup):
        model, items, images = setup
        hm = gradcam(model, items[0], "fat", 0, image_arrays=images)
        g = model.config.grid_size
        assert hm.grid.shape == (g, g)
        assert hm.grid.min() == 0.0
        assert hm.grid.max() <= 1.0

    def test_golden_grid(self, setup):
        model, items, images = setup
        hm = gradcam(model, items[0], "fat", 1, image_arrays=images)
        np.testing.assert_allclose(hm.grid, GOLDEN_GRID, atol=1e-12)
        assert hm.argmax_cell == 3
        assert hm.nutrient == "fat"
        assert hm.target_class == 1

    def test_invariant_to_logit_rescale(self, setup):
        model, items, images = setup
        base = gradcam(model, items[1], "fat", 1, image_arrays=images)
        for name in ("head.fat.l3.w", "head.fat.l3.b"):
            model.params[name].data *= 2.0
        try:
            scaled = gradcam(model, items[1], "fat", 1, image_arrays=images)
        finally:
            for name in ("head.fat.l3.w", "head.fat.l3.b"):
                model.params[name].data /= 2.0
        # doubling is exact in floating point, so so is the whole map
        np.testing.assert_array_equal(base.grid, scaled.grid)

    def test_target_class_out_of_range(self, setup):
        model, items, images = setup
        m = model.head_configs["fat"].class_count
        with pytest.raises(DomainError, match="out of range"):
            gradcam(model, items[0], "fat", m, image_arrays=images)
        with pytest.raises(DomainError, match="out of range"):
            gradcam(model, items[0], "fat", -1, image_arrays=images)

    def test_frozen_encoders_still_yield_a_heatmap(self, setup):
        # activation gradients exist even when no weight trains
        _, items, images = setup
        vocab = build_vocabulary([it.ingredients for it in items], min_frequency=1)
        specs, _ = compute_binning(items, ("fat",))
        frozen = NutrientModel(TINY, "VLF", vocab, specs, seed=0)
        frozen.freeze_encoders()
        hm = gradcam(frozen, items[0], "fat", 1, image_arrays=images)
        assert hm.grid.max() > 0.0

    def test_text_only_variant_has_no_image_path(self, setup):
        _, items, images = setup
        vocab = build_vocabulary([it.ingredients for it in items], min_frequency=1)
        specs, _ = compute_binning(items, ("fat",))
        lf = NutrientModel(TINY, "LF", vocab, specs, seed=0)
        with pytest.raises(ContractError, match="no image path"):
            gradcam(lf, items[0], "fat", 0, image_arrays=images)


class TestTokenSaliency:
    def test_specials_exactly_zero(self, setup):
        model, items, images = setup
        sal = text_saliency(model, items[0], "fat", 1, image_arrays=images)
        assert len(sal.tokens) == model.config.context_length
        assert sal.weights.shape == (model.config.context_length,)
        for tok, w in zip(sal.tokens, sal.weights):
            if tok in ("<pad>", "<bos>", "<eos>"):
                assert w == 0.0
        assert sal.weights.max() == 1.0
        assert sal.weights.min() >= 0.0
        assert not sal.all_zero

    def test_pairs_keeps_content_order(self, setup):
        model, items, images = setup
        sal = text_saliency(model, items[0], "fat", 1, image_arrays=images)
        assert [t for t, _ in sal.pairs()] == ["water", "salt", "soy", "cocoa"]

    def test_unknown_word_gets_finite_weight(self, setup):
        model, items, images = setup
        item = FoodItem(
            items[0].id, items[0].image_path,
            "water, xylitolzz", items[0].nutrients, items[0].category,
        )
        sal = text_saliency(model, item, "fat", 1, image_arrays=images)
        pair_tokens = [t for t, _ in sal.pairs()]
        assert "<unk>" in pair_tokens
        assert np.isfinite(sal.weights).all()

    def test_empty_text_is_all_zero_with_warning(self, setup, caplog):
        model, items, images = setup
        item = FoodItem(
            items[0].id, items[0].image_path, "", items[0].nutrients, items[0].category
        )
        with caplog.at_level(logging.WARNING, logger="nutricast.interpret"):
            sal = text_saliency(model, item, "fat", 1, image_arrays=images)
        assert sal.all_zero
        np.testing.assert_array_equal(sal.weights, np.zeros(model.config.context_length))
        assert "empty ingredient text" in caplog.text

    def test_invariant_to_logit_rescale(self, setup):
        model, items, images = setup
        base = text_saliency(model, items[2], "fat", 1, image_arrays=images)
        for name in ("head.fat.l3.w", "head.fat.l3.b"):
            model.params[name].data *= 2.0
        try:
            scaled = text_saliency(model, items[2], "fat", 1, image_arrays=images)
        finally:
            for name in ("head.fat.l3.w", "head.fat.l3.b"):
                model.params[name].data /= 2.0
        np.testing.assert_array_equal(base.weights, scaled.weights)

    def test_attention_method(self, setup):
        model, items, images = setup
        sal = text_saliency(
            model, items[0], "fat", 1, image_arrays=images, method="attention"
        )
        assert sal.weights.shape == (model.config.context_length,)
        assert sal.weights.max() == 1.0
        for tok, w in zip(sal.tokens, sal.weights):
            if tok == "<pad>":
                assert w == 0.0

    def test_unknown_method(self, setup):
        model, items, images = setup
        with pytest.raises(DomainError, match="method"):
            text_saliency(model, items[0], "fat", 1, image_arrays=images, method="shap")

    def test_frozen_encoders_still_yield_saliency(self, setup):
        _, items, images = setup
        vocab = build_vocabulary([it.ingredients for it in items], min_frequency=1)
        specs, _ = compute_binning(items, ("fat",))
        frozen = NutrientModel(TINY, "VLF", vocab, specs, seed=0)
        frozen.freeze_encoders()
        sal = text_saliency(frozen, items[0], "fat", 1, image_arrays=images)
        assert sal.weights.max() == 1.0

    def test_image_only_variant_has_no_text_path(self, setup):
        _, items, images = setup
        vocab = build_vocabulary([it.ingredients for it in items], min_frequency=1)
        specs, _ = compute_binning(items, ("fat",))
        vf = NutrientModel(TINY, "VF", vocab, specs, seed=0)
        with pytest.raises(ContractError, match="no text path"):
            text_saliency(vf, items[0], "fat", 0, image_arrays=images)


class TestRendering:
    def test_zero_map_leaves_image_unchanged(self):
        rng = np.random.default_rng(0)
        image = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
        hm = Heatmap(grid=np.zeros((2, 2)), nutrient="fat", target_class=0)
        np.testing.assert_array_equal(render_overlay(image, hm), image)

    def test_full_cell_blends_toward_red(self):
        image = np.full((64, 64, 3), 40, dtype=np.uint8)
        grid = np.zeros((2, 2))
        grid[0, 0] = 1.0
        hm = Heatmap(grid=grid, nutrient="fat", target_class=0)
        out = render_overlay(image, hm, alpha=0.5)
        assert out.dtype == np.uint8
        # hot cell moves halfway to red; the rest stays put
        assert (out[:32, :32] == np.array([148, 20, 20], dtype=np.uint8)).all()
        assert (out[32:, :] == 40).all()
        assert (out[:32, 32:] == 40).all()

    def test_upsample_is_nearest_neighbor(self):
        grid = np.array([[0.0, 1.0], [0.25, 0.5]])
        hm = Heatmap(grid=grid, nutrient="fat", target_class=0)
        field = upsample_heatmap(hm, 3)
        np.testing.assert_array_equal(field, np.kron(grid, np.ones((3, 3))))

    def test_grid_must_tile_image(self):
        image = np.zeros((65, 65, 3), dtype=np.uint8)
        hm = Heatmap(grid=np.zeros((2, 2)), nutrient="fat", target_class=0)
        with pytest.raises(ContractError, match="does not tile"):
            render_overlay(image, hm)

    def test_html_marks_tokens_with_weights(self, setup):
        model, items, images = setup
        sal = text_saliency(model, items[0], "fat", 1, image_arrays=images)
        html = render_saliency_html(sal)
        for tok, _ in sal.pairs():
            assert f">{tok}</span>" in html
        assert "<pad>" not in html
        assert "rgba(214, 39, 40, 1.000)" in html


class TestSaveHelpers:
    def test_heatmap_json_round_trip(self, setup, tmp_path):
        model, items, images = setup
        hm = gradcam(model, items[0], "fat", 1, image_arrays=images)
        path = tmp_path / "hm.json"
        save_heatmap_json(hm, path)
        loaded = json.loads(path.read_text())
        assert loaded["nutrient"] == "fat"
        assert loaded["target_class"] == 1
        np.testing.assert_array_equal(np.array(loaded["grid"]), hm.grid)

    def test_saliency_files(self, setup, tmp_path):
        model, items, images = setup
        sal = text_saliency(model, items[0], "fat", 1, image_arrays=images)
        jp, hp = tmp_path / "sal.json", tmp_path / "sal.html"
        save_saliency(sal, jp, hp)
        loaded = json.loads(jp.read_text())
        assert loaded["tokens"] == list(sal.tokens)
        np.testing.assert_array_equal(np.array(loaded["weights"]), sal.weights)
        assert "soy" in hp.read_text()
