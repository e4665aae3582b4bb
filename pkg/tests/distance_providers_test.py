# ruff:noqa: PT011

import shutil
import tempfile
from collections.abc import Generator
from pathlib import Path
from typing import Any

import numpy as np
import pytest
from PIL import Image

from fbsim.distance_providers import (
    FileDistanceProvider,
    GradientDistanceProvider,
    get_provider,
)
from fbsim.exceptions import ImageReadError
from fbsim.metrics import perceptual_proxy


@pytest.fixture
def temp_dir() -> Generator[str, Any, None]:
    directory = tempfile.mkdtemp()
    yield directory
    shutil.rmtree(directory)


@pytest.fixture
def images() -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(0)
    gt = rng.random((24, 20, 3))
    pred = np.clip(gt + 0.1 * rng.standard_normal(gt.shape), 0, 1)
    return pred, gt


def test_gradient_provider(images):
    pred, gt = images
    provider = GradientDistanceProvider()
    dist = provider.distance_map(pred, gt)
    assert dist.shape == (1, 1, 6, 5)
    assert np.array_equal(dist, perceptual_proxy(pred, gt))
    assert np.all(dist >= 0)


def test_file_provider_npy(temp_dir: str, images):
    pred, gt = images
    stored = np.random.default_rng(1).random((6, 5))
    np.save(Path(temp_dir) / "pair_000.npy", stored)

    provider = FileDistanceProvider(temp_dir)
    dist = provider.distance_map(pred, gt, pair_id="pair_000")
    assert dist.shape == (1, 1, 6, 5)
    np.testing.assert_array_equal(dist[0, 0], stored)


def test_file_provider_png_fallback(temp_dir: str, images):
    pred, gt = images
    Image.fromarray(np.full((6, 5), 51, dtype=np.uint8)).save(Path(temp_dir) / "pair_001.png")
    dist = FileDistanceProvider(temp_dir).distance_map(pred, gt, pair_id="pair_001")
    np.testing.assert_allclose(dist, 0.2)


def test_file_provider_errors(temp_dir: str, images):
    pred, gt = images
    with pytest.raises(ValueError):
        FileDistanceProvider(Path(temp_dir) / "missing")

    provider = FileDistanceProvider(temp_dir)
    with pytest.raises(ImageReadError):
        provider.distance_map(pred, gt, pair_id="nope")
    with pytest.raises(ValueError):
        provider.distance_map(pred, gt)

    np.save(Path(temp_dir) / "bad.npy", np.zeros((2, 3, 4)))
    with pytest.raises(ValueError):
        provider.distance_map(pred, gt, pair_id="bad")


def test_get_provider(temp_dir: str):
    assert isinstance(get_provider("gradient"), GradientDistanceProvider)
    assert isinstance(get_provider("file", temp_dir), FileDistanceProvider)
    with pytest.raises(ValueError):
        get_provider("file")
    with pytest.raises(ValueError):
        get_provider("lpips")
