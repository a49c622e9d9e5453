"""
Shared fixtures for the inspection pipeline tests
"""
from dataclasses import dataclass

import numpy as np
import pytest

from app.core.config import PipelineConfig
from app.schemas.forest import ForestParams
from app.services.imaging import GrayImage
from app.services.proposals import Crop


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def blank_image():
    return GrayImage(np.zeros((48, 64), dtype=np.uint8))


@pytest.fixture
def bright_square_image():
    """64x48 dark frame with one 6x4 bright block at x=20, y=10."""
    pixels = np.zeros((48, 64), dtype=np.uint8)
    pixels[10:14, 20:26] = 255
    return GrayImage(pixels)


@pytest.fixture
def small_forest():
    return ForestParams(n_trees=15, max_depth=8, seed=7)


@pytest.fixture
def config():
    return PipelineConfig(jobs=1)


@dataclass
class MeanFeatures:
    """Four-dim provider for pipeline tests: mean, max, bright fraction and aspect of a crop."""

    provider_id: str = "test-mean-features"
    dim: int = 4
    concurrent_safe: bool = True

    def embed(self, crop: Crop) -> np.ndarray:
        px = crop.pixels.astype(np.float64) / 255.0
        w, h = (crop.origin.bbox[2], crop.origin.bbox[3]) if crop.origin is not None else (1, 1)
        return np.array([px.mean(), px.max(), (px > 0.5).mean(), w / (w + h)])


@pytest.fixture
def mean_features():
    return MeanFeatures()
