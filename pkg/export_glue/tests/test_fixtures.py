import dataclasses
import os

import numpy as np
import pytest
import torch

from export_glue import load_fixture, make_parity_fixture, preprocess, synthesize_fixture_images
from export_glue.errors import ExportShapeMismatch
from export_glue.fixtures import _recipe_from_descriptor


class TestMakeParityFixture:
    def test_constant_gray_recorded_verbatim(self, semantic_export, tmp_path):
        result, _ = semantic_export
        image = synthesize_fixture_images(tmp_path / "src", 1, seed=0)[0]
        fixture = make_parity_fixture(result.descriptor, image, tmp_path / "fx",
                                      reference=result.reference)
        assert np.isfinite(fixture.expected).all()
        assert fixture.expected.shape == (768,)
        reloaded = load_fixture(tmp_path / "fx", "fixture-00", embed_dim=768)
        assert np.array_equal(reloaded.expected, fixture.expected)
        assert os.path.exists(reloaded.image_path)

    def test_replay_through_exported_graph(self, semantic_export):
        result, fixtures = semantic_export
        module = torch.jit.load(result.graph_path, map_location="cpu")
        recipe = _recipe_from_descriptor(result.descriptor)
        for fixture in fixtures:
            batch = preprocess(fixture.image_path, recipe)[None]
            with torch.no_grad():
                out = module(torch.from_numpy(batch)).numpy()[0]
            assert np.abs(out - fixture.expected).max() < fixture.tolerance

    def test_wrong_width_rejected_on_load(self, semantic_export, tmp_path):
        result, _ = semantic_export
        image = synthesize_fixture_images(tmp_path / "src", 1, seed=3)[0]
        make_parity_fixture(result.descriptor, image, tmp_path / "fx",
                            reference=result.reference)
        with pytest.raises(ValueError, match="embed_dim"):
            load_fixture(tmp_path / "fx", "fixture-00", embed_dim=1024)

    def test_descriptor_width_is_enforced(self, semantic_export, tmp_path):
        result, _ = semantic_export
        doctored = dataclasses.replace(result.descriptor, embed_dim=999)
        image = synthesize_fixture_images(tmp_path / "src", 1, seed=4)[0]
        with pytest.raises(ExportShapeMismatch):
            make_parity_fixture(doctored, image, tmp_path / "fx",
                                reference=result.reference)


class TestSynthesizedImages:
    def test_same_seed_same_bytes(self, tmp_path):
        a = synthesize_fixture_images(tmp_path / "a", 4, seed=9)
        b = synthesize_fixture_images(tmp_path / "b", 4, seed=9)
        for pa, pb in zip(a, b):
            assert open(pa, "rb").read() == open(pb, "rb").read()

    def test_different_seed_differs(self, tmp_path):
        a = synthesize_fixture_images(tmp_path / "a", 2, seed=1)
        b = synthesize_fixture_images(tmp_path / "b", 2, seed=2)
        assert open(a[1], "rb").read() != open(b[1], "rb").read()

    def test_count_must_be_positive(self, tmp_path):
        with pytest.raises(ValueError, match="count"):
            synthesize_fixture_images(tmp_path, 0)
