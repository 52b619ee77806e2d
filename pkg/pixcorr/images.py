"""8-bit image files: RGB pixmaps (.ppm) and class or heat graymaps (.pgm)."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import FormatError

# Pillow mode per array rank
_MODES = {2: "L", 3: "RGB"}


def save_image(path: str | os.PathLike[str], pixels: np.ndarray) -> Path:
    """Write an H x W (graymap) or H x W x 3 (pixmap) uint8 array in binary netpbm."""
    path = Path(path)
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise FormatError(f"{path}: images hold uint8 samples, got {pixels.dtype}")
    if pixels.ndim not in _MODES or (pixels.ndim == 3 and pixels.shape[2] != 3):
        raise FormatError(f"{path}: cannot store array of shape {pixels.shape} as an image")
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(pixels)).save(path, format="PPM")
    return path


def load_image(path: str | os.PathLike[str], ndim: Optional[int] = None) -> np.ndarray:
    """Read an image written by ``save_image``; ``ndim`` pins graymap (2) or pixmap (3)."""
    path = Path(path)
    try:
        with Image.open(path) as image:
            image.load()
            mode = image.mode
            pixels = np.array(image)
    except (OSError, ValueError, SyntaxError) as exc:
        raise FormatError(f"{path}: cannot read image ({exc})") from exc
    if mode not in _MODES.values():
        raise FormatError(f"{path}: unsupported image mode {mode}")
    if ndim is not None and pixels.ndim != ndim:
        kind = "graymap" if ndim == 2 else "pixmap"
        raise FormatError(f"{path}: expected a {kind}, got mode {mode}")
    return pixels


def image_to_pixels(image: np.ndarray) -> np.ndarray:
    """ch x H x W floats in [0, 1] to H x W x 3 uint8 (grayscale is replicated)."""
    if image.ndim != 3:
        raise FormatError(f"expected ch x H x W image, got shape {image.shape}")
    scaled = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    if scaled.shape[0] == 1:
        scaled = np.repeat(scaled, 3, axis=0)
    return np.transpose(scaled[:3], (1, 2, 0))


def pixels_to_image(pixels: np.ndarray) -> np.ndarray:
    """H x W x 3 uint8 to 3 x H x W floats k / 255."""
    return np.transpose(pixels.astype(np.float64) / 255.0, (2, 0, 1))
