# ruff:noqa:D102,D101,D107 docstrings

from __future__ import annotations

import os
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Optional, Union

import numpy as np

from fbsim.exceptions import ImageReadError
from fbsim.image_io import load_gray
from fbsim.metrics import ImageLike, perceptual_proxy


class DistanceProvider(ABC):
    """Source of per-pixel perceptual distance maps for the masked perceptual loss."""

    name: str = "base"

    @abstractmethod
    def distance_map(self, pred: ImageLike, gt: ImageLike, pair_id: Optional[str] = None) -> np.ndarray:
        """Return a non-negative B x 1 x h x w distance map for `(pred, gt)`."""


class GradientDistanceProvider(DistanceProvider):
    name = "gradient"

    def distance_map(
        self, pred: ImageLike, gt: ImageLike, pair_id: Optional[str] = None  # noqa: ARG002
    ) -> np.ndarray:
        return perceptual_proxy(pred, gt)


class FileDistanceProvider(DistanceProvider):
    """
    Precomputed distance maps read from a directory, one file per pair id.

    `{directory}/{pair_id}.npy` (float array, h x w or 1 x 1 x h x w) is preferred;
    `{directory}/{pair_id}.png` (single-channel 8-bit, scaled to [0, 1]) is the
    fallback. This is how externally computed LPIPS maps enter the loss.
    """

    name = "file"

    def __init__(self, directory: Union[str, os.PathLike]):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            msg = f"Distance map directory {self.directory} does not exist"
            raise ValueError(msg)

    def _find(self, pair_id: str) -> Path:
        for suffix in (".npy", ".png"):
            candidate = self.directory / f"{pair_id}{suffix}"
            if candidate.is_file():
                return candidate
        msg = f"No distance map for pair {pair_id!r} in {self.directory}"
        raise ImageReadError(msg)

    def distance_map(
        self, pred: ImageLike, gt: ImageLike, pair_id: Optional[str] = None  # noqa: ARG002
    ) -> np.ndarray:
        if pair_id is None:
            msg = "FileDistanceProvider needs a pair id"
            raise ValueError(msg)
        path = self._find(pair_id)
        if path.suffix == ".png":
            values = load_gray(path)
        else:
            try:
                values = np.load(path, allow_pickle=False)
            except (OSError, ValueError) as e:
                msg = f"Cannot read distance map {path}: {e}"
                raise ImageReadError(msg) from e

        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 2:  # noqa: PLR2004
            values = values[np.newaxis, np.newaxis]
        if values.ndim != 4 or values.shape[1] != 1:  # noqa: PLR2004
            msg = f"Distance map {path} has unsupported shape {values.shape}"
            raise ValueError(msg)
        return values


def get_provider(name: str, directory: Optional[Union[str, os.PathLike]] = None) -> DistanceProvider:
    if name == GradientDistanceProvider.name:
        return GradientDistanceProvider()
    if name == FileDistanceProvider.name:
        if directory is None:
            msg = "The file distance provider needs a directory"
            raise ValueError(msg)
        return FileDistanceProvider(directory)
    msg = f"Unknown distance provider {name!r}"
    raise ValueError(msg)
