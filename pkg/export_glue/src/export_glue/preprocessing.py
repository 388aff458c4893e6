"""Image preparation for the reference encoders.

The consumer of the exported graphs preprocesses images itself, following the
recipe recorded in the descriptor sidecar: resize the shorter side, center
crop, scale to [0, 1], normalize per channel. Fixture embeddings are only
trustworthy ground truth if this module applies the exact same arithmetic,
including the rounding of the resized long side and the float32 scaling, so
the steps below mirror that documented recipe rather than any framework's
built-in transform.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

#: Channel statistics published with the original pretrained checkpoints.
CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

_RESAMPLING = {
    "bilinear": Image.Resampling.BILINEAR,
    "bicubic": Image.Resampling.BICUBIC,
}


@dataclass(frozen=True)
class PreprocessRecipe:
    """Resize/crop/normalize constants recorded verbatim in the descriptor."""

    resize_shorter_side: int
    crop_size: int
    interpolation: str
    mean: tuple
    std: tuple

    def __post_init__(self):
        if self.crop_size < 1 or self.crop_size > self.resize_shorter_side:
            raise ValueError("crop_size must be in [1, resize_shorter_side]")
        if self.interpolation not in _RESAMPLING:
            raise ValueError(f"unknown interpolation '{self.interpolation}'")
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ValueError("mean and std must have three channels")


SEMANTIC_RECIPE = PreprocessRecipe(224, 224, "bicubic", CLIP_MEAN, CLIP_STD)
STRUCTURAL_RECIPE = PreprocessRecipe(256, 224, "bicubic", IMAGENET_MEAN, IMAGENET_STD)


def resized_dims(width: int, height: int, shorter: int) -> tuple:
    """Target (width, height) with the shorter side at ``shorter``."""
    if width <= height:
        return shorter, int(round(height * shorter / width))
    return int(round(width * shorter / height)), shorter


def preprocess(path, recipe: PreprocessRecipe) -> np.ndarray:
    """Decode and prepare one image file as a ``(3, crop, crop)`` float32 array."""
    with Image.open(path) as im:
        im.load()
        pil = im.convert("RGB") if im.mode != "RGB" else im
        new_w, new_h = resized_dims(pil.width, pil.height, recipe.resize_shorter_side)
        if (new_w, new_h) != (pil.width, pil.height):
            pil = pil.resize((new_w, new_h), resample=_RESAMPLING[recipe.interpolation])
        left = (new_w - recipe.crop_size) // 2
        top = (new_h - recipe.crop_size) // 2
        pil = pil.crop((left, top, left + recipe.crop_size, top + recipe.crop_size))
        arr = np.asarray(pil, dtype=np.float32) / np.float32(255.0)

    mean = np.asarray(recipe.mean, dtype=np.float32)
    std = np.asarray(recipe.std, dtype=np.float32)
    arr = (arr - mean) / std
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def synthesize_fixture_images(directory, count: int, seed: int = 0) -> list:
    """Write ``count`` deterministic PNG test images and return their paths.

    The first image is constant mid-gray; the rest alternate between seeded
    uniform noise and smooth two-axis gradients, cycling through a few
    non-square sizes so the resize and crop paths are exercised too.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    os.makedirs(directory, exist_ok=True)
    sizes = ((224, 224), (320, 224), (224, 288), (300, 300))
    paths = []
    for i in range(count):
        rng = np.random.default_rng((seed, i))
        w, h = sizes[i % len(sizes)]
        if i == 0:
            pixels = np.full((h, w, 3), 128, dtype=np.uint8)
        elif i % 2:
            pixels = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
        else:
            x = np.linspace(0, 255, w)[None, :, None]
            y = np.linspace(0, 255, h)[:, None, None]
            phase = rng.uniform(0, 255)
            pixels = ((x + y + phase) / 2 % 256).astype(np.uint8).repeat(3, axis=2)
        path = os.path.join(os.fspath(directory), f"fixture-{i:02d}.png")
        Image.fromarray(pixels).save(path, format="PNG")
        paths.append(path)
    return paths
