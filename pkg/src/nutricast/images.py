"""Image loading, preprocessing, and patch extraction.

Resizing is a plain numpy bilinear sampler with half-pixel centers so
preprocessed pixels do not depend on the imaging library version. When
the source already has the target resolution it is passed through
untouched, which keeps synthetic glyphs exactly patch-aligned.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ContractError, DomainError, IngestError

# standardization constants recorded in every checkpoint
DEFAULT_PIXEL_MEAN = (0.5, 0.5, 0.5)
DEFAULT_PIXEL_STD = (0.25, 0.25, 0.25)


def load_image(path: str | Path) -> np.ndarray:
    """Read PNG or JPEG into a uint8 (H, W, 3) array."""
    p = Path(path)
    if not p.is_file():
        raise IngestError(f"image not found: {p}")
    try:
        with Image.open(p) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except OSError as exc:
        raise IngestError(f"unreadable image {p}: {exc}") from None


def save_image(array: np.ndarray, path: str | Path) -> None:
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(Path(path), format="PNG")


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample to (out_h, out_w); float64 output in source units."""
    img = np.asarray(image, dtype=np.float64)
    in_h, in_w = img.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    y0 = np.clip(np.floor(ys), 0, in_h - 1).astype(np.int64)
    x0 = np.clip(np.floor(xs), 0, in_w - 1).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def preprocess(
    image: np.ndarray,
    resolution: int,
    mean: tuple[float, float, float] = DEFAULT_PIXEL_MEAN,
    std: tuple[float, float, float] = DEFAULT_PIXEL_STD,
) -> np.ndarray:
    """Resize, scale to [0, 1], standardize per channel; float64 output."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ContractError(f"expected (H, W, 3) image, got shape {image.shape}")
    resized = resize_bilinear(image, resolution, resolution) / 255.0
    return (resized - np.asarray(mean)) / np.asarray(std)


def patchify(image: np.ndarray, patch_size: int) -> np.ndarray:
    """Split (H, W, 3) into row-major non-overlapping patch vectors.

    Returns ((H/P)*(W/P), P*P*3); each patch is flattened in (y, x,
    channel) order.
    """
    if patch_size < 1:
        raise DomainError("patch_size must be positive")
    if image.ndim != 3 or image.shape[2] != 3:
        raise ContractError(f"expected (H, W, 3) image, got shape {image.shape}")
    h, w, c = image.shape
    if h % patch_size or w % patch_size:
        raise ContractError(
            f"image dims {h}x{w} not divisible by patch size {patch_size}"
        )
    gh, gw = h // patch_size, w // patch_size
    grid = image.reshape(gh, patch_size, gw, patch_size, c)
    return grid.transpose(0, 2, 1, 3, 4).reshape(gh * gw, patch_size * patch_size * c)
