import hashlib
import subprocess
import sys

import numpy as np
import pytest
import torch

from export_glue import CheckpointUnavailable, ExportShapeMismatch, export_backbone
from export_glue.export import file_sha256, render_descriptor
from modelkit import save_semantic_checkpoint


def parse_lines(path):
    fields = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            key, _, value = line.strip().partition("=")
            fields[key] = value
    return fields


def graph_output_width(graph_path, crop=224):
    """The oracle for embed_dim: what the serialized graph actually emits."""
    module = torch.jit.load(graph_path, map_location="cpu")
    with torch.no_grad():
        out = module(torch.zeros(2, 3, crop, crop))
    assert out.shape[0] == 2 and out.ndim == 2
    return int(out.shape[1])


class TestExportBackbone:
    def test_semantic_descriptor_declares_768(self, semantic_export):
        result, _ = semantic_export
        fields = parse_lines(result.descriptor_path)
        assert fields["id"] == "semantic-vit-l14"
        assert fields["embed_dim"] == "768"
        assert graph_output_width(result.graph_path) == 768

    def test_structural_descriptor_declares_1024(self, structural_export):
        result, _ = structural_export
        fields = parse_lines(result.descriptor_path)
        assert fields["id"] == "structural-vit-l14"
        assert fields["embed_dim"] == "1024"
        assert graph_output_width(result.graph_path) == 1024

    def test_content_hash_matches_graph_bytes(self, semantic_export):
        result, _ = semantic_export
        fields = parse_lines(result.descriptor_path)
        assert fields["content_hash"] == "sha256:" + file_sha256(result.graph_path)

    def test_descriptor_text_round_trips(self, semantic_export):
        result, _ = semantic_export
        with open(result.descriptor_path, "r", encoding="utf-8") as f:
            assert f.read() == render_descriptor(result.descriptor)

    def test_exported_graph_is_frozen(self, semantic_export):
        result, _ = semantic_export
        module = torch.jit.load(result.graph_path, map_location="cpu")
        params = list(module.parameters())
        assert params, "graph should carry its weights"
        assert all(not p.requires_grad for p in params)

    def test_mean_and_std_survive_the_text_format(self, semantic_export):
        result, _ = semantic_export
        fields = parse_lines(result.descriptor_path)
        assert tuple(float(v) for v in fields["mean"].split(",")) == result.descriptor.mean
        assert tuple(float(v) for v in fields["std"].split(",")) == result.descriptor.std

    def test_missing_checkpoint_raises(self, tmp_path):
        with pytest.raises(CheckpointUnavailable):
            export_backbone("semantic-vit-l14", tmp_path,
                            checkpoint=tmp_path / "nowhere")

    def test_corrupt_checkpoint_raises(self, tmp_path):
        bad = tmp_path / "broken"
        bad.mkdir()
        (bad / "config.json").write_text("{ not json", encoding="utf-8")
        with pytest.raises(CheckpointUnavailable):
            export_backbone("semantic-vit-l14", tmp_path, checkpoint=bad)

    def test_wrong_projection_width_raises(self, tmp_path):
        narrow = save_semantic_checkpoint(tmp_path / "narrow", projection_dim=64)
        with pytest.raises(ExportShapeMismatch, match="768"):
            export_backbone("semantic-vit-l14", tmp_path / "out", checkpoint=narrow)

    def test_unknown_role_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="unknown role"):
            export_backbone("acoustic-vit-l14", tmp_path)


class TestPreProjectionFlag:
    def test_semantic_pre_projection_exports_hidden_width(self, checkpoints, tmp_path):
        result = export_backbone("semantic-vit-l14", tmp_path,
                                 checkpoint=checkpoints["semantic-vit-l14"],
                                 pre_projection=True)
        fields = parse_lines(result.descriptor_path)
        assert fields["id"] == "semantic-vit-l14-pre"
        width = graph_output_width(result.graph_path)
        assert width == result.descriptor.embed_dim == 64

    def test_structural_pre_projection_rejected(self, checkpoints, tmp_path):
        with pytest.raises(ValueError, match="semantic"):
            export_backbone("structural-vit-l14", tmp_path,
                            checkpoint=checkpoints["structural-vit-l14"],
                            pre_projection=True)


class TestRepeatability:
    def test_two_runs_produce_identical_bytes(self, checkpoints, tmp_path):
        outputs = []
        for sub in ("a", "b"):
            proc = subprocess.run(
                [sys.executable, "-m", "export_glue", "semantic-vit-l14",
                 "--checkpoint", checkpoints["semantic-vit-l14"],
                 "--out", str(tmp_path / sub)],
                capture_output=True, text=True,
            )
            assert proc.returncode == 0, proc.stderr
            outputs.append(tmp_path / sub)
        a, b = outputs
        graph_a = (a / "semantic-vit-l14.pt").read_bytes()
        graph_b = (b / "semantic-vit-l14.pt").read_bytes()
        assert hashlib.sha256(graph_a).hexdigest() == hashlib.sha256(graph_b).hexdigest()
        assert ((a / "semantic-vit-l14.descriptor").read_text()
                == (b / "semantic-vit-l14.descriptor").read_text())

    def test_cli_missing_checkpoint_exits_2(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "export_glue", "structural-vit-l14",
             "--checkpoint", str(tmp_path / "void"), "--out", str(tmp_path / "out")],
            capture_output=True, text=True,
        )
        assert proc.returncode == 2
        assert "void" in proc.stderr
