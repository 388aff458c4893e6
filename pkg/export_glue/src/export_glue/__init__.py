"""One-time export of the two frozen reference encoders.

Produces, per encoder role, a portable TorchScript graph, a ``key=value``
descriptor sidecar with the exact preprocessing constants and a content hash,
and parity fixtures recording reference embeddings for spot images. The
detection toolkit consumes these files read-only; nothing else is shared.
"""

from .errors import CheckpointUnavailable, ExportError, ExportShapeMismatch
from .export import ExportDescriptor, ExportResult, export_backbone, render_descriptor
from .fixtures import ParityFixture, load_fixture, make_parity_fixture
from .preprocessing import PreprocessRecipe, preprocess, synthesize_fixture_images
from .reference import ROLES, ReferenceEncoder, load_reference

__all__ = [
    "CheckpointUnavailable",
    "ExportDescriptor",
    "ExportError",
    "ExportResult",
    "ExportShapeMismatch",
    "ParityFixture",
    "PreprocessRecipe",
    "ROLES",
    "ReferenceEncoder",
    "export_backbone",
    "load_fixture",
    "load_reference",
    "make_parity_fixture",
    "preprocess",
    "render_descriptor",
    "synthesize_fixture_images",
]
