"""Frozen feature encoders.

Two runner kinds share one interface (``spec`` attribute plus ``embed`` /
``embed_batch``): :class:`GraphBackbone` executes an exported TorchScript
graph described by a sidecar descriptor file, and :class:`ToyBackbone` is a
seeded linear stand-in that keeps the full pipeline testable without any
neural network weights. Backbones are never trained here; they only map
preprocessed images to fixed-length float32 vectors.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from .errors import GraphExecutionError, NonFiniteOutput, ShapeMismatch
from .imaging import PreprocessSpec, TensorImage

CLIP_PREPROCESS = PreprocessSpec(
    resize_shorter_side=224,
    crop_size=224,
    interpolation="bicubic",
    mean=(0.48145466, 0.4578275, 0.40821073),
    std=(0.26862954, 0.26130258, 0.27577711),
)

IMAGENET_PREPROCESS = PreprocessSpec(
    resize_shorter_side=256,
    crop_size=224,
    interpolation="bicubic",
    mean=(0.485, 0.456, 0.406),
    std=(0.229, 0.224, 0.225),
)


@dataclass(frozen=True)
class BackboneSpec:
    """Identity and contract of one encoder: its id, output width, and preprocessing."""

    id: str
    embed_dim: int
    preprocess: PreprocessSpec
    graph_path: str = ""
    l2_normalize: bool = False
    provenance: str = ""

    def __post_init__(self):
        if not self.id:
            raise ValueError("backbone id must be non-empty")
        if self.embed_dim < 1:
            raise ValueError(f"embed_dim must be positive, got {self.embed_dim}")


#: Specs for the two reference encoders this toolkit is built around. The
#: semantic encoder summarizes image content; the structural one captures
#: texture and layout statistics. Graphs for them are produced externally and
#: referenced through descriptor files.
REFERENCE_SPECS = {
    "clip-vit-l14": BackboneSpec("clip-vit-l14", 768, CLIP_PREPROCESS),
    "dinov2-vit-l14": BackboneSpec("dinov2-vit-l14", 1024, IMAGENET_PREPROCESS),
}

SEMANTIC_ID = "clip-vit-l14"
STRUCTURAL_ID = "dinov2-vit-l14"

_TOY_PREPROCESS = PreprocessSpec(
    resize_shorter_side=32,
    crop_size=32,
    interpolation="bilinear",
    mean=(0.5, 0.5, 0.5),
    std=(0.5, 0.5, 0.5),
)


def _maybe_l2(vecs: np.ndarray, enabled: bool) -> np.ndarray:
    if not enabled:
        return vecs
    norms = np.linalg.norm(vecs, axis=-1, keepdims=True)
    return vecs / np.maximum(norms, np.float32(1e-12))


class ToyBackbone:
    """Deterministic linear encoder for tests and dry runs.

    Pools the image into a 16x16 grid of per-channel means (768 values) and
    applies a fixed random projection drawn once from the seed. Linear in the
    input, so expected outputs can be computed by hand.
    """

    GRID = 16

    def __init__(self, dim: int, seed: int = 0, crop_size: int = 32, l2_normalize: bool = False):
        if dim < 1:
            raise ValueError(f"dim must be positive, got {dim}")
        if crop_size % self.GRID != 0:
            raise ValueError(f"crop_size must be a multiple of {self.GRID}")
        pooled = 3 * self.GRID * self.GRID
        rng = np.random.default_rng(seed)
        self.projection = rng.standard_normal((dim, pooled)) / np.sqrt(pooled)
        self.spec = BackboneSpec(
            id=f"toy-d{dim}-s{seed}",
            embed_dim=dim,
            preprocess=PreprocessSpec(
                resize_shorter_side=crop_size,
                crop_size=crop_size,
                interpolation="bilinear",
                mean=(0.5, 0.5, 0.5),
                std=(0.5, 0.5, 0.5),
            ),
            l2_normalize=l2_normalize,
            provenance=f"toy(seed={seed})",
        )

    def pooled(self, image: TensorImage) -> np.ndarray:
        """The 768-long grid-mean vector the projection is applied to."""
        vals = image.values
        c, h, w = vals.shape
        g = self.GRID
        if h % g or w % g:
            raise ShapeMismatch(f"toy backbone needs sides divisible by {g}, got {h}x{w}")
        grid = vals.reshape(c, g, h // g, g, w // g).mean(axis=(2, 4), dtype=np.float64)
        return grid.reshape(-1)

    def embed(self, image: TensorImage) -> np.ndarray:
        out = self.projection @ self.pooled(image)
        return _maybe_l2(out.astype(np.float32), self.spec.l2_normalize)

    def embed_batch(self, images) -> np.ndarray:
        if not images:
            return np.zeros((0, self.spec.embed_dim), dtype=np.float32)
        return np.stack([self.embed(im) for im in images])


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def parse_descriptor(path) -> dict:
    """Read a ``key=value`` descriptor sidecar into a dict.

    Blank lines and ``#`` comments are skipped. Values keep everything after
    the first ``=``, so floats survive at full printed precision.
    """
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise GraphExecutionError(f"{path}: line {lineno} is not key=value")
            out[key.strip()] = value.strip()
    return out


def _floats(csv_text: str) -> tuple:
    return tuple(float(tok) for tok in csv_text.split(","))


def spec_from_descriptor(path) -> BackboneSpec:
    """Build a :class:`BackboneSpec` from a descriptor file, without loading the graph."""
    fields = parse_descriptor(path)
    required = ("id", "embed_dim", "graph", "resize_shorter_side", "crop_size",
                "interpolation", "mean", "std")
    missing = [k for k in required if k not in fields]
    if missing:
        raise GraphExecutionError(f"{path}: descriptor missing keys {missing}")
    pre = PreprocessSpec(
        resize_shorter_side=int(fields["resize_shorter_side"]),
        crop_size=int(fields["crop_size"]),
        interpolation=fields["interpolation"],
        mean=_floats(fields["mean"]),
        std=_floats(fields["std"]),
    )
    graph_path = os.path.join(os.path.dirname(os.fspath(path)), fields["graph"])
    return BackboneSpec(
        id=fields["id"],
        embed_dim=int(fields["embed_dim"]),
        preprocess=pre,
        graph_path=graph_path,
        l2_normalize=fields.get("l2_normalize", "0") in ("1", "true", "True"),
        provenance=fields.get("provenance", ""),
    )


class GraphBackbone:
    """Runs an exported TorchScript graph as a frozen encoder."""

    def __init__(self, spec: BackboneSpec, module):
        self.spec = spec
        self._module = module

    def embed(self, image: TensorImage) -> np.ndarray:
        return self.embed_batch([image])[0]

    def embed_batch(self, images) -> np.ndarray:
        if not images:
            return np.zeros((0, self.spec.embed_dim), dtype=np.float32)
        crop = self.spec.preprocess.crop_size
        batch = np.stack([im.values for im in images])
        if batch.shape[1:] != (3, crop, crop):
            raise ShapeMismatch(
                f"{self.spec.id} expects (3, {crop}, {crop}) inputs, got {batch.shape[1:]}"
            )
        out = _run_graph(self._module, batch, self.spec)
        if not np.isfinite(out).all():
            raise NonFiniteOutput(f"{self.spec.id} produced non-finite embeddings")
        return _maybe_l2(out, self.spec.l2_normalize)


def _run_graph(module, batch: np.ndarray, spec: BackboneSpec) -> np.ndarray:
    import torch

    try:
        with torch.no_grad():
            result = module(torch.from_numpy(batch))
    except RuntimeError as exc:
        raise GraphExecutionError(f"{spec.id}: graph execution failed: {exc}") from exc
    out = result.numpy().astype(np.float32, copy=False)
    if out.ndim != 2 or out.shape != (batch.shape[0], spec.embed_dim):
        raise GraphExecutionError(
            f"{spec.id}: graph returned shape {out.shape}, "
            f"descriptor declares ({batch.shape[0]}, {spec.embed_dim})"
        )
    return out


def load_backbone(descriptor_path) -> GraphBackbone:
    """Load a graph-backed encoder from its descriptor sidecar.

    Verifies the graph file's content hash when the descriptor carries one
    and probes the graph with a zero batch so a declared/actual embedding
    width mismatch surfaces at load time rather than mid-extraction.
    """
    spec = spec_from_descriptor(descriptor_path)
    fields = parse_descriptor(descriptor_path)
    if not os.path.exists(spec.graph_path):
        raise GraphExecutionError(f"graph file not found: {spec.graph_path}")
    declared = fields.get("content_hash", "")
    if declared:
        actual = "sha256:" + file_sha256(spec.graph_path)
        if actual != declared:
            raise GraphExecutionError(
                f"{spec.graph_path}: content hash mismatch "
                f"(descriptor {declared}, file {actual})"
            )
    try:
        import torch
    except ImportError as exc:
        raise GraphExecutionError(
            "executing graph backbones requires the 'graph' extra (pip install fusescan[graph])"
        ) from exc
    try:
        module = torch.jit.load(spec.graph_path, map_location="cpu")
    except (RuntimeError, ValueError) as exc:
        raise GraphExecutionError(f"{spec.graph_path}: cannot load graph: {exc}") from exc
    module.eval()
    probe = np.zeros((1, 3, spec.preprocess.crop_size, spec.preprocess.crop_size), dtype=np.float32)
    _run_graph(module, probe, spec)
    return GraphBackbone(spec, module)
