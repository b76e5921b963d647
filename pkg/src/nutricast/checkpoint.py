"""Single-file model checkpoint.

Layout: an 8-byte magic, a little-endian u32 format version, a
length-prefixed canonical JSON metadata block, then named tensor records
sorted by name. Each record stores the name, dtype string, shape, and
the raw little-endian payload. Canonical JSON plus sorted records makes
serialization a pure function of the checkpoint contents, so identical
runs produce identical bytes and save/load/save is idempotent.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .binning import BinningSpec
from .config import ModelConfig, TrainConfig
from .errors import CheckpointError
from .model import NutrientModel
from .vocab import Vocabulary

MAGIC = b"NUTRCKPT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """Metadata plus named tensors; the complete state of a trained model."""

    metadata: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_model(
        cls,
        model: NutrientModel,
        train_config: TrainConfig | None = None,
        loss_history: Iterable[tuple[int, int, float]] = (),
    ) -> "Checkpoint":
        metadata = {
            "model_config": model.config.to_dict(),
            "variant": model.variant,
            "seed": model.seed,
            "head_configs": {n: c.to_dict() for n, c in sorted(model.head_configs.items())},
            "vocabulary": model.vocab.to_dict(),
            "binning": {n: s.to_dict() for n, s in sorted(model.binning.items())},
            "pixel_mean": list(model.pixel_mean),
            "pixel_std": list(model.pixel_std),
            "train_config": train_config.to_dict() if train_config else None,
            "loss_history": [[int(e), int(s), float(v)] for e, s, v in loss_history],
        }
        tensors = {name: p.data.copy() for name, p in model.params.items()}
        return cls(metadata=metadata, tensors=tensors)

    def to_model(self) -> NutrientModel:
        md = self.metadata
        model = NutrientModel(
            config=ModelConfig.from_dict(md["model_config"]),
            variant=md["variant"],
            vocab=Vocabulary.from_dict(md["vocabulary"]),
            binning={n: BinningSpec.from_dict(d) for n, d in md["binning"].items()},
            seed=md["seed"],
            pixel_mean=tuple(md["pixel_mean"]),
            pixel_std=tuple(md["pixel_std"]),
        )
        model.load_state(self.tensors)
        tc = md.get("train_config")
        if tc and TrainConfig.from_dict(tc).freezes_encoders:
            model.freeze_encoders()
        return model

    @property
    def loss_history(self) -> list[tuple[int, int, float]]:
        return [tuple(row) for row in self.metadata.get("loss_history", [])]


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def serialize_checkpoint(ckpt: Checkpoint) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", FORMAT_VERSION)
    meta = _canonical_json(ckpt.metadata)
    out += struct.pack("<Q", len(meta))
    out += meta
    out += struct.pack("<I", len(ckpt.tensors))
    for name in sorted(ckpt.tensors):
        # ascontiguousarray would promote 0-d scalars to 1-d
        arr = np.asarray(ckpt.tensors[name])
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        name_b = name.encode("utf-8")
        dtype_b = str(arr.dtype).encode("ascii")
        out += struct.pack("<H", len(name_b))
        out += name_b
        out += struct.pack("<H", len(dtype_b))
        out += dtype_b
        out += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            out += struct.pack("<Q", dim)
        payload = le.tobytes()
        out += struct.pack("<Q", len(payload))
        out += payload
    return bytes(out)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(
                f"truncated while reading {what}: need {n} bytes, have "
                f"{len(self.blob) - self.pos}",
                offset=self.pos,
            )
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))[0]


def deserialize_checkpoint(blob: bytes) -> Checkpoint:
    r = _Reader(blob)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)", offset=0)
    version = r.unpack("<I", "format version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {version} (expected {FORMAT_VERSION})",
            offset=len(MAGIC),
        )
    meta_len = r.unpack("<Q", "metadata length")
    meta_start = r.pos
    try:
        metadata = json.loads(r.take(meta_len, "metadata block").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt metadata block: {exc}", offset=meta_start) from None
    n_tensors = r.unpack("<I", "tensor count")
    tensors: dict[str, np.ndarray] = {}
    for i in range(n_tensors):
        name_len = r.unpack("<H", f"tensor {i} name length")
        name = r.take(name_len, f"tensor {i} name").decode("utf-8")
        dtype_len = r.unpack("<H", f"tensor {name} dtype length")
        dtype_s = r.take(dtype_len, f"tensor {name} dtype").decode("ascii")
        try:
            dtype = np.dtype(dtype_s)
        except TypeError:
            raise CheckpointError(f"tensor {name}: unknown dtype {dtype_s!r}", offset=r.pos) from None
        ndim = r.unpack("<B", f"tensor {name} rank")
        shape = tuple(r.unpack("<Q", f"tensor {name} dim {d}") for d in range(ndim))
        payload_len = r.unpack("<Q", f"tensor {name} payload length")
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if payload_len != expected:
            raise CheckpointError(
                f"tensor {name}: payload length {payload_len} != shape/dtype implied {expected}",
                offset=r.pos,
            )
        payload = r.take(payload_len, f"tensor {name} payload")
        arr = np.frombuffer(payload, dtype=dtype.newbyteorder("<")).reshape(shape)
        tensors[name] = arr.astype(dtype, copy=True)
    if r.pos != len(blob):
        raise CheckpointError(
            f"{len(blob) - r.pos} trailing bytes after last tensor", offset=r.pos
        )
    return Checkpoint(metadata=metadata, tensors=tensors)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> str:
    """Write the checkpoint; returns its content digest."""
    blob = serialize_checkpoint(ckpt)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load_checkpoint(path: str | Path) -> Checkpoint:
    p = Path(path)
    if not p.is_file():
        raise CheckpointError(f"checkpoint not found: {p}")
    return deserialize_checkpoint(p.read_bytes())


def checkpoint_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def params_digest(tensors: Mapping[str, np.ndarray], prefixes: tuple[str, ...] = ()) -> str:
    """Digest over named arrays (optionally filtered by name prefix);
    keys the frozen-encoder embedding cache."""
    h = hashlib.sha256()
    for name in sorted(tensors):
        if prefixes and not name.startswith(prefixes):
            continue
        arr = np.asarray(tensors[name])
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        h.update(name.encode("utf-8"))
        h.update(str(arr.dtype).encode("ascii"))
        h.update(str(arr.shape).encode("ascii"))
        h.update(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    return h.hexdigest()


def write_loss_csv(history: Iterable[tuple[int, int, float]], path: str | Path) -> None:
    lines = ["epoch,step,loss"]
    lines += [f"{int(e)},{int(s)},{float(v)!r}" for e, s, v in history]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
