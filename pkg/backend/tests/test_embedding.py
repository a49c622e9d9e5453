"""
Tests for crop embedding providers and the on-disk cache
"""
import struct

import numpy as np
import pytest

from app.core.config import EmbeddingConfig
from app.core.errors import ContractViolationError, ModelLoadError
from app.services.embedding import (
    BASELINE_DIM,
    BaselineDescriptor,
    EmbeddingCache,
    OnnxEmbedder,
    baseline_embed,
    check_vector,
    embed_all,
    make_provider,
)
from app.services.proposals import CROP_SIZE, Crop


def make_crop(rng, crop_id="c"):
    return Crop(pixels=rng.integers(0, 256, size=(CROP_SIZE, CROP_SIZE)).astype(np.uint8), crop_id=crop_id)


def write_pooling_model(path, channels=3):
    """Tiny ONNX graph: global average pool then flatten, so the output is one value per channel."""
    onnx = pytest.importorskip("onnx")
    from onnx import TensorProto, helper

    graph = helper.make_graph(
        [
            helper.make_node("GlobalAveragePool", ["x"], ["pooled"]),
            helper.make_node("Flatten", ["pooled"], ["y"]),
        ],
        "pool",
        [helper.make_tensor_value_info("x", TensorProto.FLOAT, [1, channels, CROP_SIZE, CROP_SIZE])],
        [helper.make_tensor_value_info("y", TensorProto.FLOAT, [1, channels])],
    )
    model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", 13)])
    model.ir_version = 8
    onnx.save(model, str(path))
    return path


class TestBaseline:
    def test_deterministic_and_normalised(self, rng):
        crop = make_crop(rng)
        a, b = baseline_embed(crop), baseline_embed(crop)
        assert a.shape == (BASELINE_DIM,)
        assert np.array_equal(a, b)
        assert np.linalg.norm(a) == pytest.approx(1.0)

    def test_black_crop_is_zero_vector(self):
        vec = baseline_embed(Crop(pixels=np.zeros((CROP_SIZE, CROP_SIZE), dtype=np.uint8)))
        assert not vec.any()

    def test_uniform_crop_has_no_gradient_half(self):
        vec = baseline_embed(Crop(pixels=np.full((CROP_SIZE, CROP_SIZE), 90, dtype=np.uint8)))
        assert not vec[256:].any()
        assert np.allclose(vec[:256], vec[0])

    def test_make_provider_defaults_to_baseline(self):
        provider = make_provider(EmbeddingConfig())
        assert isinstance(provider, BaselineDescriptor) and provider.dim == BASELINE_DIM

    def test_baseline_dimension_is_fixed(self):
        with pytest.raises(ContractViolationError):
            make_provider(EmbeddingConfig(dim=128))


class TestContract:
    def test_wrong_length(self):
        with pytest.raises(ContractViolationError):
            check_vector(np.zeros(1000), 512)

    def test_non_finite(self):
        with pytest.raises(ContractViolationError):
            check_vector(np.array([0.0, np.nan]), 2)


class TestCache:
    def test_record_layout(self, tmp_path):
        cache = EmbeddingCache(tmp_path)
        cache.put("k", np.array([1.5, -2.0]))
        blob = (tmp_path / "k.vec").read_bytes()
        assert blob == struct.pack("<I", 2) + struct.pack("<2d", 1.5, -2.0)
        np.testing.assert_array_equal(cache.get("k", 2), [1.5, -2.0])

    def test_corrupt_record_is_dropped(self, tmp_path):
        cache = EmbeddingCache(tmp_path)
        (tmp_path / "k.vec").write_bytes(b"\x02\x00\x00\x00abc")
        assert cache.get("k", 2) is None
        assert not (tmp_path / "k.vec").exists()

    def test_embed_all_uses_the_cache(self, tmp_path, rng):
        crops = [make_crop(rng, f"c{i}") for i in range(3)]
        provider = BaselineDescriptor()
        first = embed_all(crops, provider, tmp_path, jobs=2)
        assert len(list(tmp_path.glob("*.vec"))) == 3

        class Exploding(BaselineDescriptor):
            def embed(self, crop):
                raise AssertionError("cache miss")

        second = embed_all(crops, Exploding(), tmp_path)
        np.testing.assert_array_equal(first, second)

    def test_duplicate_crops_embedded_once(self, rng):
        crop = make_crop(rng)
        calls = []

        class Counting(BaselineDescriptor):
            def embed(self, c):
                calls.append(c.crop_id)
                return super().embed(c)

        out = embed_all([crop, crop], Counting())
        assert len(calls) == 1 and np.array_equal(out[0], out[1])

    def test_no_crops(self):
        assert embed_all([], BaselineDescriptor()).shape == (0, BASELINE_DIM)


class TestOnnx:
    def test_pooling_model(self, tmp_path):
        pytest.importorskip("onnxruntime")
        path = write_pooling_model(tmp_path / "pool.onnx")
        (tmp_path / "pool.json").write_text('{"mean": [0, 0, 0], "std": [1, 1, 1]}')
        embedder = OnnxEmbedder(path, dim=3)
        crop = Crop(pixels=np.full((CROP_SIZE, CROP_SIZE), 51, dtype=np.uint8))
        np.testing.assert_allclose(embedder.embed(crop), [0.2, 0.2, 0.2], rtol=1e-6)
        assert embedder.provider_id.startswith("onnx-") and embedder.provider_id.endswith("-3")

    def test_declared_dimension_mismatch(self, tmp_path):
        pytest.importorskip("onnxruntime")
        path = write_pooling_model(tmp_path / "pool.onnx")
        embedder = OnnxEmbedder(path, dim=512)
        with pytest.raises(ContractViolationError):
            embedder.embed(Crop(pixels=np.zeros((CROP_SIZE, CROP_SIZE), dtype=np.uint8)))

    def test_missing_model(self, tmp_path):
        with pytest.raises(ModelLoadError):
            OnnxEmbedder(tmp_path / "missing.onnx")

    def test_corrupt_model(self, tmp_path):
        pytest.importorskip("onnxruntime")
        path = tmp_path / "bad.onnx"
        path.write_bytes(b"not a model")
        with pytest.raises(ModelLoadError):
            OnnxEmbedder(path)
