"""Checkpoint format: byte idempotence, corruption diagnostics with
offsets, and full model round trips preserving predictions bitwise."""

import struct

import numpy as np
import pytest

from nutricast.binning import bin_nutrient
from nutricast.checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    Checkpoint,
    checkpoint_digest,
    deserialize_checkpoint,
    load_checkpoint,
    params_digest,
    save_checkpoint,
    serialize_checkpoint,
    write_loss_csv,
)
from nutricast.config import TINY, TrainConfig
from nutricast.data import FoodItem
from nutricast.errors import CheckpointError
from nutricast.model import NutrientModel
from nutricast.synth import generate_items
from nutricast.vocab import build_vocabulary


def tiny_model(variant="VLF", seed=0):
    synth = generate_items(24, seed=17)
    items = [FoodItem(s.id, f"mem://{s.id}", s.ingredients, s.nutrients, s.category) for s in synth]
    images = {s.id: s.image for s in synth}
    vocab = build_vocabulary([it.ingredients for it in items], min_frequency=1)
    specs = {}
    for ch in ("fat", "sodium"):
        _, specs[ch] = bin_nutrient(
            np.array([it.value_of(ch) for it in items]), nutrient=ch
        )
    model = NutrientModel(TINY, variant, vocab, specs, seed=seed)
    return model, items, images


class TestSerialization:
    def test_round_trip_bytes_idempotent(self):
        model, _, _ = tiny_model()
        ckpt = Checkpoint.from_model(model, loss_history=[(0, 0, 1.5), (0, 1, 1.25)])
        blob = serialize_checkpoint(ckpt)
        again = serialize_checkpoint(deserialize_checkpoint(blob))
        assert blob == again

    def test_tensors_and_metadata_survive(self):
        model, _, _ = tiny_model()
        tc = TrainConfig(variant="VLF", channels=("fat", "sodium"), epochs=2, seed=3)
        ckpt = Checkpoint.from_model(model, tc, loss_history=[(0, 0, 2.0)])
        back = deserialize_checkpoint(serialize_checkpoint(ckpt))
        assert back.metadata == ckpt.metadata
        assert set(back.tensors) == set(ckpt.tensors)
        for name in ckpt.tensors:
            np.testing.assert_array_equal(back.tensors[name], ckpt.tensors[name])
            assert back.tensors[name].dtype == ckpt.tensors[name].dtype
        assert back.loss_history == [(0, 0, 2.0)]

    def test_save_load_file(self, tmp_path):
        model, _, _ = tiny_model()
        ckpt = Checkpoint.from_model(model)
        path = tmp_path / "model.ckpt"
        digest = save_checkpoint(ckpt, path)
        assert checkpoint_digest(path) == digest
        loaded = load_checkpoint(path)
        assert loaded.metadata == ckpt.metadata

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(tmp_path / "absent.ckpt")


class TestCorruption:
    def blob(self):
        model, _, _ = tiny_model()
        return serialize_checkpoint(Checkpoint.from_model(model))

    def test_bad_magic_offset_zero(self):
        blob = b"XX" + self.blob()[2:]
        with pytest.raises(CheckpointError, match="bad magic") as err:
            deserialize_checkpoint(blob)
        assert err.value.offset == 0

    def test_version_mismatch(self):
        blob = bytearray(self.blob())
        blob[len(MAGIC) : len(MAGIC) + 4] = struct.pack("<I", FORMAT_VERSION + 1)
        with pytest.raises(CheckpointError, match="unsupported checkpoint format"):
            deserialize_checkpoint(bytes(blob))

    def test_truncation_reports_offset(self):
        blob = self.blob()
        cut = len(blob) // 2
        with pytest.raises(CheckpointError, match="truncated") as err:
            deserialize_checkpoint(blob[:cut])
        assert err.value.offset is not None
        assert 0 <= err.value.offset <= cut

    def test_trailing_bytes_rejected(self):
        with pytest.raises(CheckpointError, match="trailing bytes"):
            deserialize_checkpoint(self.blob() + b"\x00")

    def test_corrupt_metadata_json(self):
        blob = bytearray(self.blob())
        meta_start = len(MAGIC) + 4 + 8
        blob[meta_start] = ord("?")
        with pytest.raises(CheckpointError, match="corrupt metadata"):
            deserialize_checkpoint(bytes(blob))

    def test_payload_length_mismatch(self):
        model, _, _ = tiny_model()
        ckpt = Checkpoint.from_model(model)
        blob = serialize_checkpoint(ckpt)
        # shrink a 2-d tensor's recorded rank to desync the lengths
        name = "head.fat.l1.w"
        assert ckpt.tensors[name].ndim == 2
        marker = struct.pack("<H", len(name)) + name.encode()
        at = blob.index(marker)
        ndim_at = at + len(marker) + 2 + len(str(ckpt.tensors[name].dtype))
        corrupted = blob[:ndim_at] + struct.pack("<B", 1) + blob[ndim_at + 1 :]
        with pytest.raises(CheckpointError):
            deserialize_checkpoint(corrupted)


class TestModelRoundTrip:
    def test_predictions_bitwise_identical(self):
        model, items, images = tiny_model()
        batch = items[:20]
        classes_before, conf_before = model.predict(batch, "fat", image_arrays=images)
        ckpt = Checkpoint.from_model(model)
        revived = deserialize_checkpoint(serialize_checkpoint(ckpt)).to_model()
        classes_after, conf_after = revived.predict(batch, "fat", image_arrays=images)
        np.testing.assert_array_equal(classes_before, classes_after)
        np.testing.assert_array_equal(conf_before, conf_after)

    def test_frozen_variant_restored_frozen(self):
        model, _, _ = tiny_model()
        model.freeze_encoders()
        tc = TrainConfig(variant="VLF", channels=("fat", "sodium"), epochs=1, seed=0)
        revived = deserialize_checkpoint(
            serialize_checkpoint(Checkpoint.from_model(model, tc))
        ).to_model()
        assert not revived.params["image.class_token"].trainable
        assert revived.params["head.fat.l1.w"].trainable

    def test_state_dtype_is_float64(self):
        model, _, _ = tiny_model()
        revived = deserialize_checkpoint(
            serialize_checkpoint(Checkpoint.from_model(model))
        ).to_model()
        for p in revived.params.values():
            assert p.data.dtype == np.float64


class TestDigests:
    def test_params_digest_prefix_filter(self):
        model, _, _ = tiny_model()
        tensors = {n: p.data for n, p in model.params.items()}
        full = params_digest(tensors)
        enc = params_digest(tensors, prefixes=("image.", "text."))
        assert full != enc
        # head changes must not move the encoder digest
        tensors["head.fat.l1.w"] = tensors["head.fat.l1.w"] + 1.0
        assert params_digest(tensors, prefixes=("image.", "text.")) == enc
        assert params_digest(tensors) != full

    def test_loss_csv(self, tmp_path):
        path = tmp_path / "loss.csv"
        write_loss_csv([(0, 0, 1.5), (1, 0, 0.125)], path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,step,loss"
        assert lines[1] == "0,0,1.5"
        assert lines[2] == "1,0,0.125"
