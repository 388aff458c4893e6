"""Parity fixtures: ground-truth embeddings for the exported graphs.

A fixture is an image file plus the embedding the reference implementation
(not the exported graph) produces for it after preprocessing. Consumers
replay the image through their own pipeline and the exported graph, then
compare against the recorded embedding within the fixture tolerance. On disk
each fixture is two files in the fixtures directory: the image copied
verbatim and the embedding as raw little-endian float32.
"""

from __future__ import annotations

import os
import shutil
from dataclasses import dataclass

import numpy as np

from .errors import ExportShapeMismatch
from .preprocessing import PreprocessRecipe, preprocess
from .reference import ReferenceEncoder, load_reference, split_descriptor_id

DEFAULT_TOLERANCE = 1e-3

_EMBEDDING_SUFFIX = ".f32"


@dataclass(frozen=True)
class ParityFixture:
    """One image and the embedding the reference produced for it."""

    image_path: str
    expected: np.ndarray
    tolerance: float = DEFAULT_TOLERANCE

    def __post_init__(self):
        exp = self.expected
        if not isinstance(exp, np.ndarray) or exp.ndim != 1 or exp.dtype != np.float32:
            raise ValueError("expected must be a 1-D float32 array")
        if not np.isfinite(exp).all():
            raise ValueError("expected embedding must be finite")
        if self.tolerance <= 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")


def _recipe_from_descriptor(descriptor) -> PreprocessRecipe:
    return PreprocessRecipe(
        resize_shorter_side=descriptor.resize_shorter_side,
        crop_size=descriptor.crop_size,
        interpolation=descriptor.interpolation,
        mean=descriptor.mean,
        std=descriptor.std,
    )


def make_parity_fixture(descriptor, image_path, out_dir, name=None,
                        reference: ReferenceEncoder = None,
                        tolerance: float = DEFAULT_TOLERANCE) -> ParityFixture:
    """Run the reference on one preprocessed image and persist the pair.

    ``reference`` may be passed to reuse an already-loaded model; otherwise
    the checkpoint named by the descriptor's provenance is loaded afresh.
    """
    if reference is None:
        role_name, pre_projection = split_descriptor_id(descriptor.id)
        reference = load_reference(role_name, checkpoint=descriptor.provenance,
                                   pre_projection=pre_projection)
    batch = preprocess(image_path, _recipe_from_descriptor(descriptor))[None]
    embedding = reference.embed(batch)[0]
    if embedding.shape[0] != descriptor.embed_dim:
        raise ExportShapeMismatch(
            f"reference produced width {embedding.shape[0]}, "
            f"descriptor declares {descriptor.embed_dim}"
        )

    if name is None:
        name = os.path.splitext(os.path.basename(os.fspath(image_path)))[0]
    os.makedirs(out_dir, exist_ok=True)
    stored_image = os.path.join(os.fspath(out_dir), os.path.basename(os.fspath(image_path)))
    if os.path.abspath(stored_image) != os.path.abspath(os.fspath(image_path)):
        shutil.copyfile(image_path, stored_image)
    with open(os.path.join(os.fspath(out_dir), name + _EMBEDDING_SUFFIX), "wb") as f:
        f.write(embedding.astype("<f4").tobytes())
    return ParityFixture(image_path=stored_image, expected=embedding,
                         tolerance=tolerance)


def load_fixture(directory, name: str, embed_dim: int,
                 tolerance: float = DEFAULT_TOLERANCE) -> ParityFixture:
    """Read one persisted fixture back, validating the embedding width."""
    image_path = os.path.join(os.fspath(directory), name + ".png")
    embedding_path = os.path.join(os.fspath(directory), name + _EMBEDDING_SUFFIX)
    with open(embedding_path, "rb") as f:
        raw = f.read()
    expected = np.frombuffer(raw, dtype="<f4")
    if expected.shape[0] != embed_dim:
        raise ValueError(
            f"{embedding_path}: holds {expected.shape[0]} values, "
            f"expected embed_dim {embed_dim}"
        )
    return ParityFixture(image_path=image_path, expected=expected.copy(),
                         tolerance=tolerance)
