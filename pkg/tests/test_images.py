"""Image IO and preprocessing: bilinear resize behavior, standardization,
and PNG round trips. Patch extraction has its own coverage alongside the
image encoder tests."""

import numpy as np
import pytest

from nutricast.errors import ContractError, IngestError
from nutricast.images import (
    DEFAULT_PIXEL_MEAN,
    DEFAULT_PIXEL_STD,
    load_image,
    preprocess,
    resize_bilinear,
    save_image,
)


class TestResize:
    def test_same_size_is_identity_and_a_copy(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(0, 255, size=(64, 64, 3))
        out = resize_bilinear(img, 64, 64)
        np.testing.assert_array_equal(out, img)
        out[0, 0, 0] = -1.0
        assert img[0, 0, 0] != -1.0

    def test_constant_image_stays_constant(self):
        img = np.full((48, 80, 3), 37.0)
        out = resize_bilinear(img, 64, 64)
        assert out.shape == (64, 64, 3)
        np.testing.assert_allclose(out, 37.0, atol=1e-12)

    def test_upsample_preserves_mean_of_2x(self):
        # integer 2x upsampling with half-pixel centers averages neighbors,
        # so the global mean is preserved away from edge replication
        rng = np.random.default_rng(1)
        img = rng.uniform(0, 255, size=(8, 8, 3))
        out = resize_bilinear(img, 16, 16)
        np.testing.assert_allclose(
            out[4:12, 4:12].mean(), img[2:6, 2:6].mean(), rtol=0.05
        )

    def test_values_stay_in_source_range(self):
        rng = np.random.default_rng(2)
        img = rng.integers(0, 256, size=(37, 53, 3), dtype=np.uint8)
        out = resize_bilinear(img, 64, 64)
        assert out.min() >= 0.0
        assert out.max() <= 255.0


class TestPreprocess:
    def test_standardization(self):
        img = np.full((64, 64, 3), 255, dtype=np.uint8)
        out = preprocess(img, 64)
        expect = (1.0 - np.asarray(DEFAULT_PIXEL_MEAN)) / np.asarray(DEFAULT_PIXEL_STD)
        np.testing.assert_allclose(out, np.broadcast_to(expect, out.shape))

    def test_mid_gray_maps_near_zero(self):
        img = np.full((64, 64, 3), 128, dtype=np.uint8)
        out = preprocess(img, 64)
        np.testing.assert_allclose(out, (128 / 255 - 0.5) / 0.25, atol=1e-12)

    def test_custom_constants(self):
        img = np.zeros((64, 64, 3), dtype=np.uint8)
        out = preprocess(img, 64, mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0))
        np.testing.assert_array_equal(out, 0.0)

    def test_rejects_non_rgb(self):
        with pytest.raises(ContractError, match="H, W, 3"):
            preprocess(np.zeros((64, 64)), 64)


class TestFileIO:
    def test_png_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        img = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
        path = tmp_path / "img.png"
        save_image(img, path)
        np.testing.assert_array_equal(load_image(path), img)

    def test_float_input_is_clipped_and_rounded(self, tmp_path):
        img = np.array([[[-5.0, 255.4, 99.6]]], dtype=np.float64).repeat(2, 0).repeat(2, 1)
        path = tmp_path / "img.png"
        save_image(img, path)
        loaded = load_image(path)
        np.testing.assert_array_equal(loaded[0, 0], [0, 255, 100])

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestError, match="not found"):
            load_image(tmp_path / "absent.png")

    def test_unreadable_file(self, tmp_path):
        path = tmp_path / "bad.png"
        path.write_bytes(b"not a png at all")
        with pytest.raises(IngestError, match="unreadable"):
            load_image(path)
