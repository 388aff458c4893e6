"""fusescan: synthetic-image detection from frozen encoder features.

Images are embedded by two frozen vision encoders (a semantic one and a
structural one), the embeddings are concatenated, and a small trained MLP
head scores the result. The package also carries the surrounding harness:
dataset manifests and feature caches, grouped accuracy/AP reporting, a
JPEG/blur robustness grid, an exact t-SNE projector, and seeded prompt
curation for building generation benchmarks.
"""

from .backbone import (
    BackboneSpec,
    GraphBackbone,
    REFERENCE_SPECS,
    ToyBackbone,
    load_backbone,
    spec_from_descriptor,
)
from .datasets import (
    FeatureCache,
    ManifestEntry,
    SamplingSpec,
    balanced_sample,
    load_manifest,
    read_feature_cache,
    save_manifest,
    write_feature_cache,
)
from .fusion_head import (
    MlpConfig,
    MlpParams,
    TrainConfig,
    checkpoint_load,
    checkpoint_save,
    fuse,
    predict_proba,
    train,
)
from .imaging import (
    DEFAULT_ROBUSTNESS_GRID,
    PerturbSpec,
    PreprocessSpec,
    RawImage,
    TensorImage,
    gaussian_blur,
    jpeg_perturb,
    load_image,
    preprocess,
    train_augment,
)
from .metrics import (
    AggregateReport,
    EvalRecord,
    MetricsReport,
    accuracy,
    aggregate,
    assert_two_axis_split,
    average_precision,
    compute_report,
    group_records,
    render_csv,
    render_markdown,
)
from .promptgen import PromptPools, PromptRecord, generate_batch, load_pools, render_prompt
from .tsne import TsneConfig, TsneResult, conditional_affinities, run_tsne

__version__ = "0.1.0"

__all__ = [
    "AggregateReport",
    "BackboneSpec",
    "DEFAULT_ROBUSTNESS_GRID",
    "EvalRecord",
    "FeatureCache",
    "GraphBackbone",
    "ManifestEntry",
    "MetricsReport",
    "MlpConfig",
    "MlpParams",
    "PerturbSpec",
    "PreprocessSpec",
    "PromptPools",
    "PromptRecord",
    "RawImage",
    "REFERENCE_SPECS",
    "SamplingSpec",
    "TensorImage",
    "TrainConfig",
    "TsneConfig",
    "TsneResult",
    "ToyBackbone",
    "accuracy",
    "aggregate",
    "assert_two_axis_split",
    "average_precision",
    "balanced_sample",
    "checkpoint_load",
    "checkpoint_save",
    "compute_report",
    "conditional_affinities",
    "fuse",
    "gaussian_blur",
    "generate_batch",
    "group_records",
    "jpeg_perturb",
    "load_backbone",
    "load_image",
    "load_manifest",
    "load_pools",
    "predict_proba",
    "preprocess",
    "read_feature_cache",
    "render_csv",
    "render_markdown",
    "render_prompt",
    "run_tsne",
    "save_manifest",
    "spec_from_descriptor",
    "train",
    "train_augment",
    "write_feature_cache",
]
