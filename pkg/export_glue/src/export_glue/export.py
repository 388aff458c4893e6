"""Tracing the frozen reference encoders into portable graph files.

Each export writes two files into the output directory: a TorchScript graph
with a single float input of shape (N, 3, crop, crop) and a single float
output of shape (N, embed_dim), and a line-delimited ``key=value`` descriptor
sidecar recording the graph's identity, output width, exact normalization
constants, checkpoint provenance, and a content hash of the graph bytes.
Consumers parse only the sidecar; nothing else is shared with them.

The graph serializer derives type names from a process-wide counter, so
exporting is reproducible per process run: the same checkpoint exported by
two separate runs yields byte-identical graphs, while a repeat export inside
one process is functionally identical but not byte-identical. The command
line interface therefore performs one export per invocation.
"""

from __future__ import annotations

import hashlib
import os
import warnings
from dataclasses import dataclass, fields

import numpy as np
import torch

from .errors import ExportError, ExportShapeMismatch
from .reference import ReferenceEncoder, descriptor_id, load_reference

#: Graph container format consumers should expect, pinned in the descriptor.
GRAPH_FORMAT = "torchscript"

#: Largest reference-vs-graph deviation an export is allowed to ship with.
SELF_CHECK_TOLERANCE = 1e-3


@dataclass(frozen=True)
class ExportDescriptor:
    """Everything a consumer needs to run one exported graph."""

    id: str
    embed_dim: int
    graph: str
    resize_shorter_side: int
    crop_size: int
    interpolation: str
    mean: tuple
    std: tuple
    l2_normalize: int
    provenance: str
    content_hash: str
    graph_format: str = GRAPH_FORMAT
    torch_version: str = torch.__version__

    def __post_init__(self):
        if self.embed_dim < 1:
            raise ValueError(f"embed_dim must be positive, got {self.embed_dim}")
        if not self.content_hash.startswith("sha256:"):
            raise ValueError("content_hash must be a 'sha256:<hex>' string")
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ValueError("mean and std must have three channels")


@dataclass(frozen=True)
class ExportResult:
    graph_path: str
    descriptor_path: str
    descriptor: ExportDescriptor
    #: The loaded reference model, reusable for fixture generation.
    reference: ReferenceEncoder


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def render_descriptor(descriptor: ExportDescriptor) -> str:
    """Serialize a descriptor as ``key=value`` lines.

    Floats are written with ``repr`` so the consumer parses back the exact
    same values; tuples become comma-separated lists.
    """
    lines = []
    for field in fields(descriptor):
        value = getattr(descriptor, field.name)
        if isinstance(value, tuple):
            value = ",".join(repr(float(v)) for v in value)
        lines.append(f"{field.name}={value}")
    return "\n".join(lines) + "\n"


def export_backbone(role_name: str, out_dir, checkpoint=None,
                    pre_projection: bool = False) -> ExportResult:
    """Trace one role's frozen reference encoder to ``out_dir``.

    The traced graph is probed with a two-image batch before anything is
    written: its output must be (2, embed_dim) and must match the eager
    reference within :data:`SELF_CHECK_TOLERANCE` max-abs.
    """
    reference = load_reference(role_name, checkpoint=checkpoint,
                               pre_projection=pre_projection)
    recipe = reference.role.recipe
    crop = recipe.crop_size

    example = torch.zeros(1, 3, crop, crop)
    with warnings.catch_warnings():
        # Tracing transformer blocks trips shape-is-constant warnings that do
        # not apply here: the input is always (N, 3, crop, crop).
        warnings.simplefilter("ignore")
        traced = torch.jit.trace(reference.module, example)

    probe = np.random.default_rng(0).standard_normal((2, 3, crop, crop)).astype(np.float32)
    with torch.no_grad():
        traced_out = traced(torch.from_numpy(probe)).numpy()
    if traced_out.shape != (2, reference.embed_dim):
        raise ExportShapeMismatch(
            f"{role_name}: graph emits shape {traced_out.shape}, "
            f"role promises (2, {reference.embed_dim})"
        )
    drift = float(np.abs(traced_out - reference.embed(probe)).max())
    if drift > SELF_CHECK_TOLERANCE:
        raise ExportError(
            f"{role_name}: traced graph deviates from the reference by {drift:.3e}"
        )

    identifier = descriptor_id(role_name, pre_projection)
    os.makedirs(out_dir, exist_ok=True)
    graph_name = f"{identifier}.pt"
    graph_path = os.path.join(os.fspath(out_dir), graph_name)
    torch.jit.save(traced, graph_path)

    descriptor = ExportDescriptor(
        id=identifier,
        embed_dim=reference.embed_dim,
        graph=graph_name,
        resize_shorter_side=recipe.resize_shorter_side,
        crop_size=crop,
        interpolation=recipe.interpolation,
        mean=recipe.mean,
        std=recipe.std,
        l2_normalize=0,
        provenance=reference.provenance,
        content_hash="sha256:" + file_sha256(graph_path),
    )
    descriptor_path = os.path.join(os.fspath(out_dir), f"{identifier}.descriptor")
    with open(descriptor_path, "w", encoding="utf-8") as f:
        f.write(render_descriptor(descriptor))
    return ExportResult(graph_path=graph_path, descriptor_path=descriptor_path,
                        descriptor=descriptor, reference=reference)
