"""Image decoding, encoder preprocessing, and degradation kernels.

Everything here is deterministic: the same bytes in give the same array out,
and the two degradations (JPEG re-encoding, Gaussian blur) are pure functions
of the pixels and their single parameter. Randomness only enters through
:func:`train_augment`, which takes an explicit generator.
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import convolve1d

from .errors import DecodeError, EncodeError

_RESAMPLING = {
    "bilinear": Image.Resampling.BILINEAR,
    "bicubic": Image.Resampling.BICUBIC,
}


@dataclass(frozen=True)
class RawImage:
    """A decoded 8-bit RGB image with pixels shaped ``(height, width, 3)``."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if not isinstance(p, np.ndarray):
            raise ValueError("pixels must be a numpy array")
        if p.dtype != np.uint8 or p.ndim != 3 or p.shape[2] != 3:
            raise ValueError(f"pixels must be (H, W, 3) uint8, got {p.dtype} {p.shape}")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError("image must be at least 1x1")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def constant(cls, width: int, height: int, value) -> "RawImage":
        """Build a solid-color image; ``value`` is a scalar or an RGB triple."""
        pixels = np.empty((height, width, 3), dtype=np.uint8)
        pixels[...] = np.asarray(value, dtype=np.uint8)
        return cls(pixels)


@dataclass(frozen=True)
class TensorImage:
    """A preprocessed image as a ``(3, H, W)`` float32 array, finite everywhere."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if not isinstance(v, np.ndarray) or v.dtype != np.float32:
            raise ValueError("values must be a float32 numpy array")
        if v.ndim != 3 or v.shape[0] != 3:
            raise ValueError(f"values must be (3, H, W), got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("values must be finite")


@dataclass(frozen=True)
class PreprocessSpec:
    """Resize/crop/normalize recipe an encoder expects.

    The shorter image side is resized to ``resize_shorter_side`` (the longer
    side scales to preserve aspect ratio), then a center crop of
    ``crop_size`` is taken, then channels are scaled to [0, 1] and normalized
    with ``mean`` and ``std``.
    """

    resize_shorter_side: int
    crop_size: int
    interpolation: str
    mean: tuple
    std: tuple

    def __post_init__(self):
        if self.resize_shorter_side < 1 or self.crop_size < 1:
            raise ValueError("resize and crop sizes must be positive")
        if self.crop_size > self.resize_shorter_side:
            raise ValueError("crop_size cannot exceed resize_shorter_side")
        if self.interpolation not in _RESAMPLING:
            raise ValueError(f"unknown interpolation '{self.interpolation}'")
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ValueError("mean and std must have three channels")
        if any(s <= 0 for s in self.std):
            raise ValueError("std entries must be positive")


def load_image(path) -> RawImage:
    """Decode an image file to RGB, dropping alpha and expanding grayscale."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    try:
        with Image.open(path) as im:
            im.load()
            rgb = im.convert("RGB") if im.mode != "RGB" else im
            pixels = np.asarray(rgb, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"{path}: {exc}") from exc
    return RawImage(pixels)


def resized_dims(width: int, height: int, shorter: int) -> tuple:
    """Target (width, height) after resizing the shorter side to ``shorter``."""
    if width <= height:
        return shorter, int(round(height * shorter / width))
    return int(round(width * shorter / height)), shorter


def preprocess(image: RawImage, spec: PreprocessSpec) -> TensorImage:
    """Resize, center-crop, and normalize an image for one encoder."""
    pil = Image.fromarray(image.pixels)
    new_w, new_h = resized_dims(image.width, image.height, spec.resize_shorter_side)
    if (new_w, new_h) != (image.width, image.height):
        pil = pil.resize((new_w, new_h), resample=_RESAMPLING[spec.interpolation])
    left = (new_w - spec.crop_size) // 2
    top = (new_h - spec.crop_size) // 2
    pil = pil.crop((left, top, left + spec.crop_size, top + spec.crop_size))

    arr = np.asarray(pil, dtype=np.float32) / np.float32(255.0)
    mean = np.asarray(spec.mean, dtype=np.float32)
    std = np.asarray(spec.std, dtype=np.float32)
    arr = (arr - mean) / std
    return TensorImage(np.ascontiguousarray(arr.transpose(2, 0, 1)))


def jpeg_perturb(image: RawImage, quality_factor: int) -> RawImage:
    """Re-encode through JPEG at the given quality factor and decode back.

    Dimensions are preserved and the result is deterministic for a fixed
    input and quality factor.
    """
    qf = int(quality_factor)
    if not 1 <= qf <= 100:
        raise ValueError(f"quality factor must be in [1, 100], got {quality_factor}")
    buf = io.BytesIO()
    try:
        Image.fromarray(image.pixels).save(buf, format="JPEG", quality=qf)
    except OSError as exc:
        raise EncodeError(f"JPEG encode failed: {exc}") from exc
    buf.seek(0)
    with Image.open(buf) as decoded:
        pixels = np.asarray(decoded.convert("RGB"), dtype=np.uint8)
    return RawImage(pixels)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """1-D Gaussian taps with radius ceil(3*sigma), normalized to sum to 1."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(image: RawImage, sigma: float) -> RawImage:
    """Separable Gaussian blur with clamped (edge-replicating) borders."""
    k = gaussian_kernel(sigma)
    arr = image.pixels.astype(np.float64)
    arr = convolve1d(arr, k, axis=0, mode="nearest")
    arr = convolve1d(arr, k, axis=1, mode="nearest")
    return RawImage(np.clip(np.rint(arr), 0, 255).astype(np.uint8))


@dataclass(frozen=True)
class PerturbSpec:
    """One cell of a degradation grid: identity, JPEG at a QF, or blur at a sigma."""

    kind: str
    quality_factor: int = 0
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("identity", "jpeg", "blur"):
            raise ValueError(f"unknown perturbation kind '{self.kind}'")
        if self.kind == "jpeg" and not 1 <= self.quality_factor <= 100:
            raise ValueError("jpeg perturbation needs a quality factor in [1, 100]")
        if self.kind == "blur" and self.sigma <= 0:
            raise ValueError("blur perturbation needs a positive sigma")

    @classmethod
    def identity(cls) -> "PerturbSpec":
        return cls("identity")

    @classmethod
    def jpeg(cls, quality_factor: int) -> "PerturbSpec":
        return cls("jpeg", quality_factor=quality_factor)

    @classmethod
    def blur(cls, sigma: float) -> "PerturbSpec":
        return cls("blur", sigma=sigma)

    @property
    def label(self) -> str:
        if self.kind == "identity":
            return "clean"
        if self.kind == "jpeg":
            return f"jpeg-qf{self.quality_factor}"
        return f"blur-sigma{self.sigma:g}"

    def apply(self, image: RawImage) -> RawImage:
        if self.kind == "identity":
            return image
        if self.kind == "jpeg":
            return jpeg_perturb(image, self.quality_factor)
        return gaussian_blur(image, self.sigma)


DEFAULT_ROBUSTNESS_GRID = (
    PerturbSpec.identity(),
    PerturbSpec.jpeg(95),
    PerturbSpec.jpeg(75),
    PerturbSpec.jpeg(50),
    PerturbSpec.blur(1.0),
    PerturbSpec.blur(2.0),
    PerturbSpec.blur(3.0),
)


def parse_perturb(token: str) -> PerturbSpec:
    """Parse a grid token: ``clean``, ``jpeg:75``, or ``blur:2.0``."""
    token = token.strip()
    if token in ("clean", "identity"):
        return PerturbSpec.identity()
    kind, sep, arg = token.partition(":")
    if not sep:
        raise ValueError(f"cannot parse perturbation '{token}'")
    if kind == "jpeg":
        return PerturbSpec.jpeg(int(arg))
    if kind == "blur":
        return PerturbSpec.blur(float(arg))
    raise ValueError(f"cannot parse perturbation '{token}'")


def train_augment(
    image: RawImage,
    rng: np.random.Generator,
    probability: float = 0.10,
    qf_range: tuple = (50, 95),
    sigma_range: tuple = (0.5, 3.0),
) -> RawImage:
    """Randomly degrade a training image.

    With probability ``probability`` the image is either JPEG re-encoded at a
    quality factor drawn uniformly from ``qf_range`` or blurred at a sigma
    drawn uniformly from ``sigma_range``, the two picked with equal odds.
    Otherwise the input is returned unchanged. All draws come from ``rng``,
    so a fixed seed fixes the outcome.
    """
    if not 0.0 <= probability <= 1.0:
        raise ValueError(f"probability must be in [0, 1], got {probability}")
    if rng.random() >= probability:
        return image
    if rng.integers(2) == 0:
        qf = int(rng.integers(qf_range[0], qf_range[1] + 1))
        return jpeg_perturb(image, qf)
    sigma = float(rng.uniform(sigma_range[0], sigma_range[1]))
    return gaussian_blur(image, sigma)
