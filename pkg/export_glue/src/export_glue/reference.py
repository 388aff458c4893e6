"""The two reference encoders and their checkpoint plumbing.

Each exportable role names a pretrained vision model, the slice of its output
that serves as the image embedding, and the preprocessing recipe its weights
were trained with. Checkpoints load from a local ``save_pretrained`` directory
when one is given, falling back to the model hub otherwise; either way the
model is frozen (eval mode, no gradients) before anything else touches it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from transformers import CLIPVisionModelWithProjection, Dinov2Model

from .errors import CheckpointUnavailable
from .preprocessing import SEMANTIC_RECIPE, STRUCTURAL_RECIPE, PreprocessRecipe


class _SemanticHead(torch.nn.Module):
    """Post-projection image embedding of the semantic encoder."""

    def __init__(self, model):
        super().__init__()
        self.model = model

    def forward(self, pixel_values):
        return self.model(pixel_values=pixel_values).image_embeds


class _SemanticPreProjectionHead(torch.nn.Module):
    """Pooled vision features before the projection layer."""

    def __init__(self, model):
        super().__init__()
        self.model = model.vision_model

    def forward(self, pixel_values):
        return self.model(pixel_values).pooler_output


class _StructuralHead(torch.nn.Module):
    """Class-token embedding of the structural encoder."""

    def __init__(self, model):
        super().__init__()
        self.model = model

    def forward(self, pixel_values):
        return self.model(pixel_values=pixel_values).last_hidden_state[:, 0]


@dataclass(frozen=True)
class Role:
    name: str
    hub_checkpoint: str
    embed_dim: int
    recipe: PreprocessRecipe
    model_class: type
    head_class: type


ROLES = {
    "semantic-vit-l14": Role(
        name="semantic-vit-l14",
        hub_checkpoint="openai/clip-vit-large-patch14",
        embed_dim=768,
        recipe=SEMANTIC_RECIPE,
        model_class=CLIPVisionModelWithProjection,
        head_class=_SemanticHead,
    ),
    "structural-vit-l14": Role(
        name="structural-vit-l14",
        hub_checkpoint="facebook/dinov2-large",
        embed_dim=1024,
        recipe=STRUCTURAL_RECIPE,
        model_class=Dinov2Model,
        head_class=_StructuralHead,
    ),
}


def descriptor_id(role_name: str, pre_projection: bool) -> str:
    return f"{role_name}-pre" if pre_projection else role_name


def split_descriptor_id(identifier: str) -> tuple:
    """Inverse of :func:`descriptor_id`: (role name, pre_projection flag)."""
    if identifier.endswith("-pre"):
        return identifier[: -len("-pre")], True
    return identifier, False


@dataclass(frozen=True)
class ReferenceEncoder:
    """A frozen reference model ready to embed preprocessed image batches."""

    role: Role
    provenance: str
    embed_dim: int
    module: torch.nn.Module

    def embed(self, batch: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            out = self.module(torch.from_numpy(np.ascontiguousarray(batch)))
        return out.numpy().astype(np.float32, copy=False)


def load_reference(role_name: str, checkpoint=None,
                   pre_projection: bool = False) -> ReferenceEncoder:
    """Load and freeze the reference model behind one exportable role."""
    if role_name not in ROLES:
        raise ValueError(f"unknown role '{role_name}', expected one of {sorted(ROLES)}")
    role = ROLES[role_name]
    if pre_projection and role.head_class is not _SemanticHead:
        raise ValueError("pre-projection export only applies to the semantic role")

    source = str(checkpoint) if checkpoint is not None else role.hub_checkpoint
    try:
        model = role.model_class.from_pretrained(source)
    except OSError as exc:
        raise CheckpointUnavailable(f"{source}: {exc}") from exc
    model.eval()
    for param in model.parameters():
        param.requires_grad_(False)

    if pre_projection:
        head = _SemanticPreProjectionHead(model)
        embed_dim = int(model.config.hidden_size)
    else:
        head = role.head_class(model)
        embed_dim = role.embed_dim
    return ReferenceEncoder(role=role, provenance=source,
                            embed_dim=embed_dim, module=head.eval())
