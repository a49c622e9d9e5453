"""
Stage II: crop embeddings
Providers turn a 224x224 crop into a fixed-dimension feature vector. The
built-in descriptor keeps everything hermetic; an ONNX network can be plugged
in instead. embed_all adds a content-addressed on-disk cache.
"""
import hashlib
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Protocol, Sequence, Tuple, Union, runtime_checkable

import numpy as np
from loguru import logger

from app.core.config import EmbeddingConfig
from app.core.errors import ContractViolationError, InvalidArgumentError, ModelLoadError
from app.services.imaging import GrayImage, sobel_magnitude
from app.services.proposals import CROP_SIZE, Crop

BASELINE_DIM = 512
_GRID = 16
_CELL = CROP_SIZE // _GRID  # 14

# ImageNet statistics, used when a model ships without a sidecar
_DEFAULT_MEAN = (0.485, 0.456, 0.406)
_DEFAULT_STD = (0.229, 0.224, 0.225)


@runtime_checkable
class EmbeddingProvider(Protocol):
    """Deterministic crop -> vector mapping with a constant dimension."""

    provider_id: str
    dim: int
    # whether embed() may be called from several threads at once
    concurrent_safe: bool

    def embed(self, crop: Crop) -> np.ndarray: ...


def check_vector(values: np.ndarray, dim: int) -> np.ndarray:
    """Validate a feature vector: 1-D float64 of length dim with finite entries."""
    vec = np.asarray(values, dtype=np.float64).reshape(-1)
    if vec.size != dim:
        raise ContractViolationError(f"feature vector has {vec.size} values, expected {dim}")
    if not np.all(np.isfinite(vec)):
        raise ContractViolationError("feature vector contains non-finite values")
    return vec


def _cell_means(values: np.ndarray) -> np.ndarray:
    return values.reshape(_GRID, _CELL, _GRID, _CELL).mean(axis=(1, 3)).reshape(-1)


def baseline_embed(crop: Crop) -> np.ndarray:
    """16x16 grid of mean intensities and of mean Sobel-3 magnitudes, L2-normalized."""
    if crop.pixels.shape != (CROP_SIZE, CROP_SIZE):
        raise InvalidArgumentError(f"baseline descriptor needs a {CROP_SIZE}x{CROP_SIZE} crop")
    intensity = _cell_means(crop.pixels.astype(np.float64) / 255.0)
    gradient = sobel_magnitude(GrayImage(crop.pixels), 3).pixels.astype(np.float64) / 255.0
    vec = np.concatenate([intensity, _cell_means(gradient)])
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        return vec
    return vec / norm


class BaselineDescriptor:
    provider_id = "baseline-v1"
    dim = BASELINE_DIM
    concurrent_safe = True

    def embed(self, crop: Crop) -> np.ndarray:
        return baseline_embed(crop)


class OnnxEmbedder:
    """Embeds crops with an ONNX network that outputs its pooled feature vector.

    The optional sidecar ``<model>.json`` may set ``channels``, ``mean`` and
    ``std`` (per channel, on the 0..1 scale) and ``output`` (output name).
    """

    concurrent_safe = True

    def __init__(self, model_path: Union[str, Path], dim: int = BASELINE_DIM):
        model_path = Path(model_path)
        if not model_path.is_file():
            raise ModelLoadError(f"embedding model not found: {model_path}")
        try:
            import onnxruntime as ort
        except ImportError as exc:
            raise ModelLoadError("onnxruntime is required for --model embeddings") from exc

        blob = model_path.read_bytes()
        try:
            options = ort.SessionOptions()
            options.intra_op_num_threads = 1
            self.session = ort.InferenceSession(blob, sess_options=options, providers=["CPUExecutionProvider"])
        except Exception as exc:
            raise ModelLoadError(f"cannot load embedding model {model_path}: {exc}") from exc

        self.dim = dim
        self.provider_id = f"onnx-{hashlib.sha256(blob).hexdigest()[:16]}-{dim}"
        self.input_name = self.session.get_inputs()[0].name
        self.channels, self.mean, self.std, self.output_name = self._read_sidecar(model_path)
        logger.info(
            "Loaded embedding model {} (input '{}', {} channels, dim {})",
            model_path.name, self.input_name, self.channels, dim,
        )

    def _read_sidecar(self, model_path: Path) -> Tuple[int, np.ndarray, np.ndarray, Optional[str]]:
        sidecar = model_path.with_suffix(".json")
        shape = self.session.get_inputs()[0].shape
        channels = shape[1] if len(shape) == 4 and isinstance(shape[1], int) else 3
        meta = {}
        if sidecar.is_file():
            try:
                meta = json.loads(sidecar.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise ModelLoadError(f"model sidecar {sidecar} is not valid JSON: {exc}") from exc
        else:
            logger.warning("No sidecar {} found; using ImageNet normalization", sidecar.name)
        channels = int(meta.get("channels", channels))
        mean = np.asarray(meta.get("mean", _DEFAULT_MEAN[:channels]), dtype=np.float32)
        std = np.asarray(meta.get("std", _DEFAULT_STD[:channels]), dtype=np.float32)
        if mean.size != channels or std.size != channels:
            raise ModelLoadError(f"sidecar {sidecar.name}: mean/std need {channels} entries")
        return channels, mean, std, meta.get("output")

    def preprocess(self, crop: Crop) -> np.ndarray:
        """Grayscale crop -> (1, C, 224, 224) float32, channels replicated then normalized."""
        gray = crop.pixels.astype(np.float32) / 255.0
        stacked = np.repeat(gray[None, :, :], self.channels, axis=0)
        normalized = (stacked - self.mean[:, None, None]) / self.std[:, None, None]
        return normalized[None].astype(np.float32)

    def embed(self, crop: Crop) -> np.ndarray:
        outputs = self.session.run(
            [self.output_name] if self.output_name else None, {self.input_name: self.preprocess(crop)}
        )
        return check_vector(np.asarray(outputs[0], dtype=np.float64), self.dim)


def model_embed(crop: Crop, model: OnnxEmbedder) -> np.ndarray:
    return model.embed(crop)


def make_provider(config: Optional[EmbeddingConfig] = None) -> EmbeddingProvider:
    config = config or EmbeddingConfig()
    if config.provider == "onnx":
        return OnnxEmbedder(config.model_path, dim=config.dim)
    if config.dim != BASELINE_DIM:
        raise ContractViolationError(f"the baseline descriptor is {BASELINE_DIM}-dimensional, config asks {config.dim}")
    return BaselineDescriptor()


class EmbeddingCache:
    """Directory of `<hash>.vec` records: little-endian uint32 dim + dim float64 values."""

    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(provider: EmbeddingProvider, crop: Crop) -> str:
        digest = hashlib.sha256()
        digest.update(provider.provider_id.encode("utf-8"))
        digest.update(b"\0")
        digest.update(crop.pixels.tobytes())
        return digest.hexdigest()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.vec"

    def get(self, key: str, dim: int) -> Optional[np.ndarray]:
        path = self._path(key)
        if not path.is_file():
            return None
        blob = path.read_bytes()
        if len(blob) >= 4:
            (stored_dim,) = struct.unpack_from("<I", blob)
            if stored_dim == dim and len(blob) == 4 + 8 * dim:
                vec = np.frombuffer(blob, dtype="<f8", offset=4).astype(np.float64)
                if np.all(np.isfinite(vec)):
                    return vec
        logger.warning("Corrupt embedding cache record {}; rebuilding it", path.name)
        path.unlink(missing_ok=True)
        return None

    def put(self, key: str, vec: np.ndarray) -> None:
        path = self._path(key)
        tmp = path.with_suffix(".tmp")
        tmp.write_bytes(struct.pack("<I", vec.size) + np.asarray(vec, dtype="<f8").tobytes())
        tmp.replace(path)


def embed_all(
    crops: Sequence[Crop],
    provider: EmbeddingProvider,
    cache_path: Optional[Union[str, Path]] = None,
    jobs: int = 1,
) -> np.ndarray:
    """Embed every crop; returns an (n, dim) array in input order."""
    if not crops:
        return np.zeros((0, provider.dim), dtype=np.float64)

    cache = EmbeddingCache(cache_path) if cache_path is not None else None
    keys = [EmbeddingCache.key(provider, c) for c in crops]
    vectors: dict = {}
    if cache is not None:
        for key in dict.fromkeys(keys):
            hit = cache.get(key, provider.dim)
            if hit is not None:
                vectors[key] = hit

    # identical crops are embedded once
    todo: List[Tuple[str, Crop]] = []
    seen = set(vectors)
    for key, crop in zip(keys, crops):
        if key not in seen:
            seen.add(key)
            todo.append((key, crop))

    def run(item: Tuple[str, Crop]) -> np.ndarray:
        return check_vector(provider.embed(item[1]), provider.dim)

    if todo:
        workers = jobs if provider.concurrent_safe else 1
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                computed = list(pool.map(run, todo))
        else:
            computed = [run(item) for item in todo]
        for (key, _), vec in zip(todo, computed):
            vectors[key] = vec
            if cache is not None:
                cache.put(key, vec)

    logger.info(
        "Embedded {} crops with {} ({} computed, {} from cache)",
        len(crops), provider.provider_id, len(todo), len(set(keys)) - len(todo),
    )
    return np.stack([vectors[k] for k in keys])
