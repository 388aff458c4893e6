import pytest
from transformers.utils import logging as hf_logging

from export_glue import export_backbone, make_parity_fixture, synthesize_fixture_images
from modelkit import save_semantic_checkpoint, save_structural_checkpoint

hf_logging.set_verbosity_error()
hf_logging.disable_progress_bar()

FIXTURE_COUNT = 6


@pytest.fixture(scope="session")
def checkpoints(tmp_path_factory):
    root = tmp_path_factory.mktemp("checkpoints")
    return {
        "semantic-vit-l14": save_semantic_checkpoint(root / "semantic"),
        "structural-vit-l14": save_structural_checkpoint(root / "structural"),
    }


def _export_with_fixtures(role, checkpoint, out_dir):
    result = export_backbone(role, out_dir, checkpoint=checkpoint)
    images = synthesize_fixture_images(out_dir / "fixture-src", FIXTURE_COUNT, seed=11)
    fixtures = [
        make_parity_fixture(result.descriptor, image, out_dir / "fixtures",
                            reference=result.reference)
        for image in images
    ]
    return result, fixtures


@pytest.fixture(scope="session")
def semantic_export(checkpoints, tmp_path_factory):
    return _export_with_fixtures("semantic-vit-l14", checkpoints["semantic-vit-l14"],
                                 tmp_path_factory.mktemp("semantic-export"))


@pytest.fixture(scope="session")
def structural_export(checkpoints, tmp_path_factory):
    return _export_with_fixtures("structural-vit-l14", checkpoints["structural-vit-l14"],
                                 tmp_path_factory.mktemp("structural-export"))
