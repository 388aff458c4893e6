import numpy as np
import pytest

from fusescan.backbone import (
    REFERENCE_SPECS,
    ToyBackbone,
    file_sha256,
    load_backbone,
    parse_descriptor,
    spec_from_descriptor,
)
from fusescan.errors import GraphExecutionError, ShapeMismatch
from fusescan.imaging import TensorImage


def tensor_image(values):
    return TensorImage(np.asarray(values, dtype=np.float32))


class TestReferenceSpecs:
    def test_reference_dims(self):
        assert REFERENCE_SPECS["clip-vit-l14"].embed_dim == 768
        assert REFERENCE_SPECS["dinov2-vit-l14"].embed_dim == 1024

    def test_reference_preprocessing_constants(self):
        clip = REFERENCE_SPECS["clip-vit-l14"].preprocess
        assert clip.mean == (0.48145466, 0.4578275, 0.40821073)
        assert clip.std == (0.26862954, 0.26130258, 0.27577711)
        assert (clip.resize_shorter_side, clip.crop_size) == (224, 224)
        dino = REFERENCE_SPECS["dinov2-vit-l14"].preprocess
        assert dino.mean == (0.485, 0.456, 0.406)
        assert dino.std == (0.229, 0.224, 0.225)
        assert (dino.resize_shorter_side, dino.crop_size) == (256, 224)


class TestToyBackbone:
    def test_constant_image_matches_row_sum_oracle(self):
        tb = ToyBackbone(dim=8, seed=0)
        c = 0.37
        img = tensor_image(np.full((3, 32, 32), c))
        expected = (c * tb.projection.sum(axis=1)).astype(np.float32)
        np.testing.assert_allclose(tb.embed(img), expected, atol=1e-6)

    def test_pooling_matches_hand_loop(self, rng):
        tb = ToyBackbone(dim=4, seed=1)
        values = rng.standard_normal((3, 32, 32)).astype(np.float32)
        pooled = tb.pooled(tensor_image(values))
        by_hand = np.empty((3, 16, 16))
        for c in range(3):
            for gy in range(16):
                for gx in range(16):
                    patch = values[c, gy * 2:(gy + 1) * 2, gx * 2:(gx + 1) * 2]
                    by_hand[c, gy, gx] = patch.astype(np.float64).mean()
        np.testing.assert_allclose(pooled, by_hand.reshape(-1), rtol=1e-12)

    def test_linearity(self, rng):
        tb = ToyBackbone(dim=6, seed=3)
        x = rng.standard_normal((3, 32, 32)).astype(np.float32)
        y = rng.standard_normal((3, 32, 32)).astype(np.float32)
        combined = tb.embed(tensor_image(2.0 * x + 0.5 * y))
        separate = 2.0 * tb.embed(tensor_image(x)) + 0.5 * tb.embed(tensor_image(y))
        np.testing.assert_allclose(combined, separate, atol=1e-5)

    def test_same_seed_same_projection(self):
        assert np.array_equal(ToyBackbone(8, seed=5).projection,
                              ToyBackbone(8, seed=5).projection)
        assert not np.array_equal(ToyBackbone(8, seed=5).projection,
                                  ToyBackbone(8, seed=6).projection)

    def test_embed_batch_matches_single(self, rng):
        tb = ToyBackbone(dim=5, seed=2)
        images = [tensor_image(rng.standard_normal((3, 32, 32)).astype(np.float32))
                  for _ in range(4)]
        batch = tb.embed_batch(images)
        singles = np.stack([tb.embed(im) for im in images])
        np.testing.assert_allclose(batch, singles, atol=1e-5)

    def test_rejects_indivisible_sides(self):
        tb = ToyBackbone(dim=2)
        with pytest.raises(ShapeMismatch):
            tb.embed(tensor_image(np.zeros((3, 30, 32), dtype=np.float32)))

    def test_rejects_bad_dim(self):
        with pytest.raises(ValueError):
            ToyBackbone(dim=0)

    def test_l2_normalize_flag(self, rng):
        tb = ToyBackbone(dim=8, seed=0, l2_normalize=True)
        img = tensor_image(rng.standard_normal((3, 32, 32)).astype(np.float32))
        assert abs(np.linalg.norm(tb.embed(img)) - 1.0) < 1e-5

    def test_output_is_float32(self):
        out = ToyBackbone(dim=3).embed(tensor_image(np.zeros((3, 32, 32), np.float32)))
        assert out.dtype == np.float32


DESCRIPTOR_TEXT = """\
# encoder descriptor
format=torchscript
format_version=1
id=tiny-linear
embed_dim=5
graph={graph_name}
resize_shorter_side=16
crop_size=16
interpolation=bilinear
mean=0.48145466,0.4578275,0.40821073
std=0.26862954,0.26130258,0.27577711
l2_normalize=0
provenance=unit-test
{hash_line}
"""


class TestDescriptor:
    def write(self, tmp_path, graph_name="tiny.pt", hash_line=""):
        path = tmp_path / "tiny.descriptor"
        path.write_text(DESCRIPTOR_TEXT.format(graph_name=graph_name, hash_line=hash_line),
                        encoding="utf-8")
        return path

    def test_parses_key_values_and_skips_comments(self, tmp_path):
        fields = parse_descriptor(self.write(tmp_path))
        assert fields["id"] == "tiny-linear"
        assert fields["embed_dim"] == "5"
        assert "format" in fields

    def test_spec_round_trips_normalization_constants(self, tmp_path):
        spec = spec_from_descriptor(self.write(tmp_path))
        assert spec.preprocess.mean == (0.48145466, 0.4578275, 0.40821073)
        assert spec.preprocess.std == (0.26862954, 0.26130258, 0.27577711)
        assert spec.embed_dim == 5
        assert spec.preprocess.crop_size == 16

    def test_missing_keys_rejected(self, tmp_path):
        path = tmp_path / "bad.descriptor"
        path.write_text("id=x\nembed_dim=3\n", encoding="utf-8")
        with pytest.raises(GraphExecutionError):
            spec_from_descriptor(path)

    def test_non_key_value_line_rejected(self, tmp_path):
        path = tmp_path / "bad.descriptor"
        path.write_text("just some words\n", encoding="utf-8")
        with pytest.raises(GraphExecutionError):
            parse_descriptor(path)


class TestGraphBackbone:
    @pytest.fixture
    def graph_dir(self, tmp_path):
        torch = pytest.importorskip("torch")

        class Tiny(torch.nn.Module):
            def __init__(self):
                super().__init__()
                self.lin = torch.nn.Linear(3 * 16 * 16, 5)

            def forward(self, x):
                return self.lin(x.flatten(1))

        torch.manual_seed(0)
        module = torch.jit.trace(Tiny().eval(), torch.zeros(1, 3, 16, 16))
        graph_path = tmp_path / "tiny.pt"
        torch.jit.save(module, str(graph_path))
        hash_line = f"content_hash=sha256:{file_sha256(graph_path)}"
        descriptor = tmp_path / "tiny.descriptor"
        descriptor.write_text(
            DESCRIPTOR_TEXT.format(graph_name="tiny.pt", hash_line=hash_line),
            encoding="utf-8")
        weight = module.lin.weight.detach().numpy()
        bias = module.lin.bias.detach().numpy()
        return descriptor, weight, bias

    def test_embed_matches_manual_linear_algebra(self, graph_dir, rng):
        descriptor, weight, bias = graph_dir
        runner = load_backbone(descriptor)
        values = rng.standard_normal((3, 16, 16)).astype(np.float32)
        got = runner.embed(tensor_image(values))
        expected = weight @ values.reshape(-1) + bias
        np.testing.assert_allclose(got, expected, atol=1e-5)
        assert got.dtype == np.float32

    def test_batch_matches_singles(self, graph_dir, rng):
        descriptor, _, _ = graph_dir
        runner = load_backbone(descriptor)
        images = [tensor_image(rng.standard_normal((3, 16, 16)).astype(np.float32))
                  for _ in range(3)]
        np.testing.assert_allclose(runner.embed_batch(images),
                                   np.stack([runner.embed(im) for im in images]),
                                   atol=1e-5)

    def test_wrong_input_shape_rejected(self, graph_dir):
        descriptor, _, _ = graph_dir
        runner = load_backbone(descriptor)
        with pytest.raises(ShapeMismatch):
            runner.embed(tensor_image(np.zeros((3, 8, 8), dtype=np.float32)))

    def test_content_hash_mismatch_rejected(self, graph_dir):
        descriptor, _, _ = graph_dir
        text = descriptor.read_text(encoding="utf-8")
        tampered = text.replace("content_hash=sha256:", "content_hash=sha256:00")
        descriptor.write_text(tampered, encoding="utf-8")
        with pytest.raises(GraphExecutionError):
            load_backbone(descriptor)

    def test_missing_graph_file_rejected(self, tmp_path):
        pytest.importorskip("torch")
        descriptor = tmp_path / "ghost.descriptor"
        descriptor.write_text(
            DESCRIPTOR_TEXT.format(graph_name="ghost.pt", hash_line=""),
            encoding="utf-8")
        with pytest.raises(GraphExecutionError):
            load_backbone(descriptor)

    def test_declared_dim_contradicting_graph_rejected(self, graph_dir):
        descriptor, _, _ = graph_dir
        text = descriptor.read_text(encoding="utf-8").replace("embed_dim=5", "embed_dim=7")
        descriptor.write_text(text, encoding="utf-8")
        with pytest.raises(GraphExecutionError):
            load_backbone(descriptor)
